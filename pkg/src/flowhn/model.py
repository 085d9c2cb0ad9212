"""The full autoregressive byte-level language model.

Byte embedding + learned positional embedding, a cascade of parallel
blocks (block i uses the SplitPlan for block_index=i), final layer norm,
and a tied output head. Parameters live in a nested dict; `flatten` gives
the deterministic flat name -> tensor view used by the optimizer and the
checkpoint format.
"""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

from . import flops
from .block import BranchTimes, block_backward, block_forward, init_block_params
from .config import ModelConfig
from .ops import layernorm_bwd, layernorm_fwd, softmax
from .routing import plan


# ---------------------------------------------------------------------------
# parameter store
# ---------------------------------------------------------------------------

def init_params(config: ModelConfig, dtype=np.float64):
    """Deterministic seeded initialization; same config+seed -> same tensors."""
    rng = np.random.default_rng(config.seed)
    params = {
        "tok_emb": rng.normal(0.0, 0.02, (config.vocab_size, config.d_model)).astype(dtype),
        "pos_emb": rng.normal(0.0, 0.02, (config.seq_len, config.d_model)).astype(dtype),
        "blocks": [
            init_block_params(config.d_model, config.n_heads, config.d_inner,
                              config.d_state, rng, dtype)
            for _ in range(config.n_blocks)
        ],
        "ln_f": {"g": np.ones(config.d_model, dtype=dtype),
                 "b": np.zeros(config.d_model, dtype=dtype)},
    }
    return params


def flatten(params, prefix=""):
    """Yield (dotted-name, tensor) in deterministic order."""
    if isinstance(params, np.ndarray):
        yield prefix, params
        return
    if isinstance(params, list):
        for i, item in enumerate(params):
            yield from flatten(item, f"{prefix}.{i}" if prefix else str(i))
        return
    for key, val in params.items():
        name = f"{prefix}.{key}" if prefix else key
        yield from flatten(val, name)


def flat_dict(params) -> OrderedDict:
    return OrderedDict(flatten(params))


def zeros_like_params(params):
    if isinstance(params, np.ndarray):
        return np.zeros_like(params)
    if isinstance(params, list):
        return [zeros_like_params(p) for p in params]
    return {k: zeros_like_params(v) for k, v in params.items()}


def add_into(acc, grads):
    """acc += grads over matching nested structures."""
    if isinstance(acc, np.ndarray):
        acc += grads
        return
    if isinstance(acc, list):
        for a, g in zip(acc, grads):
            add_into(a, g)
        return
    for k in acc:
        add_into(acc[k], grads[k])


def param_count(config: ModelConfig) -> int:
    """Closed-form element count; must equal the actual store total."""
    d, di, ds = config.d_model, config.d_inner, config.d_state
    emb = config.vocab_size * d + config.seq_len * d
    attn = 4 * d * d + 4 * d
    ssm = (2 * d * di + 2 * di          # in/gate projections
           + di * di + di               # delta generator
           + 2 * (di * ds + ds)         # B and C generators
           + di * ds                    # a_log
           + di * d + d)                # out projection
    block = (2 * d) + attn + ssm + (2 * d * d + d) + (2 * d) + (8 * d * d + 4 * d + d)
    return emb + config.n_blocks * block + 2 * d


# ---------------------------------------------------------------------------
# forward / loss / backward
# ---------------------------------------------------------------------------

def forward(config: ModelConfig, params, token_ids, times: BranchTimes | None = None,
            collect_cache=True):
    """token_ids: (B, L) or (L,) ints -> logits (B, L, vocab)."""
    tokens = np.atleast_2d(np.asarray(token_ids))
    if tokens.min() < 0 or tokens.max() >= config.vocab_size:
        raise ValueError("token ids out of range")
    B, L = tokens.shape
    if L > config.seq_len:
        raise ValueError(f"sequence length {L} exceeds config seq_len {config.seq_len}")
    prof = flops.FlopProfile(
        flops.attn_flops_per_token(config, L),
        flops.ssm_flops_per_token(config),
        flops.compute_block_size(L, flops.attn_flops_per_token(config, L),
                                 flops.ssm_flops_per_token(config)))

    x = params["tok_emb"][tokens] + params["pos_emb"][:L]
    caches = []
    for i, bp in enumerate(params["blocks"]):
        pln = plan(config.split_mode, L, i, prof.block_size)
        x, cache = block_forward(bp, x, pln, exec_mode=config.exec_mode,
                                 n_heads=config.n_heads, times=times)
        if collect_cache:
            caches.append(cache)
    h, c_lnf = layernorm_fwd(x, params["ln_f"]["g"], params["ln_f"]["b"])
    logits = h @ params["tok_emb"].T
    full_cache = (tokens, h, c_lnf, caches) if collect_cache else None
    if np.asarray(token_ids).ndim == 1:
        return logits[0], full_cache
    return logits, full_cache


def loss(logits, targets):
    """Mean next-token cross-entropy (natural log).

    targets may cover fewer positions than logits (e.g. L-1 when they are
    the inputs shifted left by one); only the leading targets.shape[-1]
    positions are scored.
    """
    targets = np.atleast_2d(np.asarray(targets))
    logits = logits if logits.ndim == 3 else logits[None]
    T = targets.shape[-1]
    lg = logits[:, :T]
    m = lg.max(axis=-1, keepdims=True)
    logz = m[..., 0] + np.log(np.exp(lg - m).sum(axis=-1))
    picked = np.take_along_axis(lg, targets[..., None], axis=-1)[..., 0]
    return float((logz - picked).mean())


def loss_grad(logits, targets):
    """d(mean cross-entropy)/d(logits); zero at unscored positions."""
    targets = np.atleast_2d(np.asarray(targets))
    logits3 = logits if logits.ndim == 3 else logits[None]
    B, L, V = logits3.shape
    T = targets.shape[-1]
    dl = np.zeros_like(logits3)
    p = softmax(logits3[:, :T], axis=-1)
    p[np.arange(B)[:, None], np.arange(T)[None, :], targets] -= 1.0
    dl[:, :T] = p / (B * T)
    return dl if logits.ndim == 3 else dl[0]


def backward(config: ModelConfig, params, full_cache, dlogits,
             times: BranchTimes | None = None):
    """Gradients for every parameter tensor, same nested shape as params."""
    tokens, h, c_lnf, caches = full_cache
    B, L = tokens.shape
    d = config.d_model
    dlogits = dlogits if dlogits.ndim == 3 else dlogits[None]

    dh = dlogits @ params["tok_emb"]
    d_tok_emb = dlogits.reshape(-1, dlogits.shape[-1]).T @ h.reshape(-1, d)
    dx, dg_f, db_f = layernorm_bwd(dh, c_lnf)

    grads = {"tok_emb": d_tok_emb, "pos_emb": np.zeros_like(params["pos_emb"]),
             "blocks": [None] * config.n_blocks,
             "ln_f": {"g": dg_f, "b": db_f}}
    for i in range(config.n_blocks - 1, -1, -1):
        dx, g = block_backward(dx, caches[i], exec_mode=config.exec_mode, times=times)
        grads["blocks"][i] = g

    np.add.at(grads["tok_emb"], tokens.ravel(), dx.reshape(-1, d))
    grads["pos_emb"][:L] = dx.sum(axis=0)
    return grads


# ---------------------------------------------------------------------------
# checkpoint format: "FLWH", u32 version, u32 count, then per entry
# u16 name length, name bytes, u8 rank, u32 dims, little-endian f32 data
# ---------------------------------------------------------------------------

MAGIC = b"FLWH"
VERSION = 1


def save_checkpoint(params, path):
    entries = list(flatten(params))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(entries)))
        for name, arr in entries:
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> OrderedDict:
    """Flat name -> float64 tensor (values are exactly the stored f32)."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a FLWH checkpoint")
        version, count = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        out = OrderedDict()
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(shape)
            out[name] = data.astype(np.float64)
    return out


def apply_flat(params, flat: OrderedDict):
    """Write flat checkpoint tensors back into a nested parameter store."""
    current = flat_dict(params)
    if set(current) != set(flat):
        missing = sorted(set(current) ^ set(flat))
        raise ValueError(f"checkpoint does not match model: {missing[:5]}")
    for name, arr in flat.items():
        if current[name].shape != arr.shape:
            raise ValueError(f"shape mismatch for {name}")
        current[name][...] = arr
    return params

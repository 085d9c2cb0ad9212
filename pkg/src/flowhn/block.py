"""One parallel hybrid block: route, run both branches, fuse, MLP.

Forward path: pre-norm -> gather per the SplitPlan -> attention and SSM
branches (concurrently on a two-lane executor when exec_mode='parallel') ->
zero-filled concat via scatter_merge -> 2d->d fusion projection + residual
-> pre-norm + MLP + residual. Scheduling never changes values: serial and
parallel execution are bit-identical.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .branches import (attention_backward, attention_forward,
                       init_attention_params, init_ssm_params, ssm_backward,
                       ssm_forward)
from .ops import gelu_bwd, gelu_fwd, layernorm_bwd, layernorm_fwd, linear_bwd, linear_fwd
from .routing import SplitPlan, scatter_merge

_EXECUTOR = None


def _executor() -> ThreadPoolExecutor:
    global _EXECUTOR
    if _EXECUTOR is None:
        _EXECUTOR = ThreadPoolExecutor(max_workers=2, thread_name_prefix="flowhn-lane")
    return _EXECUTOR


@dataclass
class BranchTimes:
    """Accumulated lane timings (seconds) across block branch regions."""

    ssm: float = 0.0
    attn: float = 0.0
    elapsed: float = 0.0  # wall time of the two-branch regions (join to join)
    regions: int = 0


def _run_two(fn_ssm, fn_attn, exec_mode, times):
    """Run the two branch closures, optionally on separate lanes, timing each."""
    t0 = time.perf_counter()
    if exec_mode == "parallel":
        ex = _executor()
        fut_s = ex.submit(_timed, fn_ssm)
        fut_a = ex.submit(_timed, fn_attn)
        res_s, dt_s = fut_s.result()
        res_a, dt_a = fut_a.result()
    else:
        res_s, dt_s = _timed(fn_ssm)
        res_a, dt_a = _timed(fn_attn)
    if times is not None:
        times.ssm += dt_s
        times.attn += dt_a
        times.elapsed += time.perf_counter() - t0
        times.regions += 1
    return res_s, res_a


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def init_block_params(d, n_heads, d_inner, d_state, rng, dtype=np.float64):
    return {
        "ln1": {"g": np.ones(d, dtype=dtype), "b": np.zeros(d, dtype=dtype)},
        "attn": init_attention_params(d, n_heads, rng, dtype),
        "ssm": init_ssm_params(d, d_inner, d_state, rng, dtype),
        "fuse": {"w": rng.normal(0.0, 0.02, (2 * d, d)).astype(dtype),
                 "b": np.zeros(d, dtype=dtype)},
        "ln2": {"g": np.ones(d, dtype=dtype), "b": np.zeros(d, dtype=dtype)},
        "ffn": {"w1": rng.normal(0.0, 0.02, (d, 4 * d)).astype(dtype),
                "b1": np.zeros(4 * d, dtype=dtype),
                "w2": rng.normal(0.0, 0.02, (4 * d, d)).astype(dtype),
                "b2": np.zeros(d, dtype=dtype)},
    }


def block_forward(params, x, plan: SplitPlan, exec_mode="serial", n_heads=1,
                  times: BranchTimes | None = None):
    """x: (B, L, d) -> (B, L, d). plan must cover exactly L positions."""
    B, L, d = x.shape
    if plan.seq_len != L:
        raise ValueError(f"plan is for seq_len {plan.seq_len}, input has {L}")
    u, c_ln1 = layernorm_fwd(x, params["ln1"]["g"], params["ln1"]["b"])
    ssm_idx = list(plan.ssm_indices)
    attn_idx = list(plan.attn_indices)
    xs = np.ascontiguousarray(u[:, ssm_idx])
    xa = np.ascontiguousarray(u[:, attn_idx])

    (s_out, c_ssm), (a_out, c_attn) = _run_two(
        lambda: ssm_forward(params["ssm"], xs),
        lambda: attention_forward(params["attn"], xa, positions=attn_idx, n_heads=n_heads),
        exec_mode, times)

    z = scatter_merge(plan, s_out, a_out, d)
    fused, c_fuse = linear_fwd(z, params["fuse"]["w"], params["fuse"]["b"])
    y = x + fused
    v, c_ln2 = layernorm_fwd(y, params["ln2"]["g"], params["ln2"]["b"])
    h1, c_l1 = linear_fwd(v, params["ffn"]["w1"], params["ffn"]["b1"])
    a1, c_gelu = gelu_fwd(h1)
    f2, c_l2 = linear_fwd(a1, params["ffn"]["w2"], params["ffn"]["b2"])
    out = y + f2
    cache = (plan, c_ln1, c_ssm, c_attn, c_fuse, c_ln2, c_l1, c_gelu, c_l2,
             x.shape)
    return out, cache


def block_backward(dout, cache, exec_mode="serial", times: BranchTimes | None = None):
    """Returns (dx, nested grads dict matching init_block_params)."""
    (plan, c_ln1, c_ssm, c_attn, c_fuse, c_ln2, c_l1, c_gelu, c_l2, xshape) = cache
    B, L, d = xshape

    da1, dw2, db2 = linear_bwd(dout, c_l2)
    dh1 = gelu_bwd(da1, c_gelu)
    dv, dw1, db1 = linear_bwd(dh1, c_l1)
    dy_ln, dg2, dbias2 = layernorm_bwd(dv, c_ln2)
    dy = dout + dy_ln

    dz, dwf, dbf = linear_bwd(dy, c_fuse)
    ssm_idx = list(plan.ssm_indices)
    attn_idx = list(plan.attn_indices)
    d_s = np.ascontiguousarray(dz[:, ssm_idx, :d])
    d_a = np.ascontiguousarray(dz[:, attn_idx, d:])

    (res_s, res_a) = _run_two(
        lambda: ssm_backward(d_s, c_ssm),
        lambda: attention_backward(d_a, c_attn),
        exec_mode, times)
    dxs, g_ssm = res_s
    dxa, g_attn = res_a

    du = np.zeros(xshape, dtype=dout.dtype)
    # index lists are duplicate-free, so fancy += accumulates correctly
    # (in NoSplit both lists cover every position and both adds apply)
    du[:, ssm_idx] += dxs
    du[:, attn_idx] += dxa
    dx_ln, dg1, dbias1 = layernorm_bwd(du, c_ln1)
    dx = dy + dx_ln

    grads = {
        "ln1": {"g": dg1, "b": dbias1},
        "attn": g_attn,
        "ssm": g_ssm,
        "fuse": {"w": dwf, "b": dbf},
        "ln2": {"g": dg2, "b": dbias2},
        "ffn": {"w1": dw1, "b1": db1, "w2": dw2, "b2": db2},
    }
    return dx, grads

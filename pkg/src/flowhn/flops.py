"""Analytic FLOP accounting for the two branches and the full model.

Costs are forward-pass FLOPs counted as 2x the multiply-add (MAC) count of
the matmul-shaped work actually implemented in `branches`; softmax,
normalization, and activation functions are excluded (matmul-dominated
accounting; only the branch ratio matters for routing). The SSM branch cost
is per token and independent of context length; the attention branch cost
is evaluated at a fixed context length, which keeps the branch ratio static
across blocks the way the circulating-split block size formula expects.
"""

from __future__ import annotations

from dataclasses import dataclass

from .config import ModelConfig
from .routing import SplitMode, plan


@dataclass(frozen=True)
class FlopProfile:
    """Per-token forward costs of each branch plus the derived SSM share."""

    f_attn_per_token: float
    f_ssm_per_token: float
    block_size: int


def attn_flops_per_token(config: ModelConfig, context_len: int) -> float:
    """Forward FLOPs per token of the attention branch at a given context.

    MACs per token: Q/K/V/O projections 4*d^2, plus score computation and
    value aggregation 2*context_len*d (the causal average context is
    approximated by context_len for routing purposes). Biases excluded.
    """
    if context_len < 1:
        raise ValueError("context_len must be >= 1")
    d = config.d_model
    macs = 4 * d * d + 2 * context_len * d
    return 2.0 * macs


def ssm_flops_terms(config: ModelConfig) -> dict:
    """Named MAC terms of the SSM branch forward, per token.

    Mirrors the layer shapes in `branches.ssm_forward`: input and gate
    projections, the per-token delta/B/C generators, the d_inner x d_state
    recurrence update, readout, gating, and the output projection.
    """
    d, di, ds = config.d_model, config.d_inner, config.d_state
    return {
        "in_proj": d * di,
        "gate_proj": d * di,
        "delta_gen": di * di,
        "b_gen": di * ds,
        "c_gen": di * ds,
        # decay = exp(delta*A), state update decay*h + (delta*u) B, readout C.h
        "recurrence": 4 * di * ds + 2 * di,
        "out_proj": di * d,
    }


def ssm_flops_per_token(config: ModelConfig) -> float:
    """Forward FLOPs per token of the SSM branch (context-independent)."""
    return 2.0 * sum(ssm_flops_terms(config).values())


def compute_block_size(seq_len: int, f_attn: float, f_ssm: float) -> int:
    """Token count for the SSM branch that balances per-branch FLOPs.

    Rounds L / (F_s/F_a + 1) to the nearest integer and clamps to
    [1, L-1] so both branches always receive work.
    """
    if seq_len < 2:
        raise ValueError("split modes require seq_len >= 2")
    if f_attn <= 0 or f_ssm <= 0:
        raise ValueError("branch FLOP costs must be positive")
    raw = seq_len * f_attn / (f_ssm + f_attn)
    return int(min(max(round(raw), 1), seq_len - 1))


def profile(config: ModelConfig) -> FlopProfile:
    """FlopProfile for a model config, attention evaluated at seq_len."""
    fa = attn_flops_per_token(config, config.seq_len)
    fs = ssm_flops_per_token(config)
    return FlopProfile(fa, fs, compute_block_size(config.seq_len, fa, fs))


def _attn_subset_flops(config: ModelConfig, n: int) -> float:
    """Actual forward FLOPs of the attention branch run on an n-token subset."""
    d = config.d_model
    return 2.0 * (4 * d * d * n + 2 * n * n * d)


def model_flops_per_iter(config: ModelConfig, mode: SplitMode, batch_size: int,
                         seq_len: int | None = None, backward_factor: float = 3.0) -> float:
    """Total FLOPs per training iteration on batch_size sequences.

    Sums the routed branch work per block (attention priced at its actual
    subset length), the fusion projection, the MLP, and the tied output
    head. backward_factor=3 is the usual forward+backward convention.
    """
    L = seq_len if seq_len is not None else config.seq_len
    d = config.d_model
    fs = ssm_flops_per_token(config)
    prof = FlopProfile(attn_flops_per_token(config, L), fs,
                       compute_block_size(L, attn_flops_per_token(config, L), fs))
    per_seq = 0.0
    for i in range(config.n_blocks):
        pln = plan(mode, L, i, prof.block_size)
        per_seq += _attn_subset_flops(config, len(pln.attn_indices))
        per_seq += fs * len(pln.ssm_indices)
        per_seq += 2.0 * (2 * d * d) * L          # fusion projection 2d -> d
        per_seq += 2.0 * (8 * d * d) * L          # MLP d -> 4d -> d
    per_seq += 2.0 * d * config.vocab_size * L    # tied output head
    return backward_factor * per_seq * batch_size


def flops_table(config: ModelConfig) -> str:
    """Human-readable summary used by `flowhn flops`."""
    prof = profile(config)
    total = prof.f_attn_per_token + prof.f_ssm_per_token
    lines = [
        f"{'branch':<12}{'flops/token':>16}{'time share':>14}",
        f"{'attention':<12}{prof.f_attn_per_token:>16.0f}{prof.f_attn_per_token / total:>14.3f}",
        f"{'ssm':<12}{prof.f_ssm_per_token:>16.0f}{prof.f_ssm_per_token / total:>14.3f}",
        f"block_size (ssm tokens per block at L={config.seq_len}): {prof.block_size}",
    ]
    return "\n".join(lines)

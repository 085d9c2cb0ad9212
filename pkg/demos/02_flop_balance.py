#!/usr/bin/env python3
"""How the FLOP model picks the split point.

The routing goal: hand the SSM enough tokens that both branches finish at
the same time. Attention cost per token grows with context length; the
SSM's does not, so longer contexts push more tokens to the SSM side.

Run: python3 demos/02_flop_balance.py
"""

from flowhn.config import ModelConfig
from flowhn.flops import (attn_flops_per_token, compute_block_size,
                          flops_table, profile, ssm_flops_per_token)

cfg = ModelConfig(d_model=64, n_heads=4, d_inner=128, d_state=16,
                  seq_len=128).validate()

print("=== per-branch forward cost at the desk config ===")
print(flops_table(cfg))

print("\n=== block size vs context length ===")
print(f"{'L':>6} {'attn F/tok':>12} {'ssm F/tok':>12} {'block_size':>11} "
      f"{'ssm share':>10}")
for L in (32, 64, 128, 256, 512, 1024, 4096):
    fa = attn_flops_per_token(cfg, L)
    fs = ssm_flops_per_token(cfg)
    bs = compute_block_size(L, fa, fs)
    print(f"{L:>6} {fa:>12.0f} {fs:>12.0f} {bs:>11} {bs / L:>10.2f}")

print("\n=== the balance bound ===")
# the split can only be off by one token's worth of work
prof = profile(cfg)
ns = prof.block_size
na = cfg.seq_len - ns
gap = abs(ns * prof.f_ssm_per_token - na * prof.f_attn_per_token)
print(f"ssm lane:  {ns:4d} tokens x {prof.f_ssm_per_token:.0f} = "
      f"{ns * prof.f_ssm_per_token:.3e} FLOPs")
print(f"attn lane: {na:4d} tokens x {prof.f_attn_per_token:.0f} = "
      f"{na * prof.f_attn_per_token:.3e} FLOPs")
print(f"gap {gap:.3e} <= max per-token cost "
      f"{max(prof.f_ssm_per_token, prof.f_attn_per_token):.3e}: "
      f"{gap <= max(prof.f_ssm_per_token, prof.f_attn_per_token)}")

#!/usr/bin/env python3
"""Measure tokens/sec and model FLOPs utilization per routing mode.

MFU needs a declared device peak FLOP rate; there is no auto-detection.
The number below is a placeholder for "one CPU core doing ~5 GFLOP/s of
float64 matmul" -- substitute your own measured peak for honest MFU.

Run: python3 demos/04_throughput_mfu.py
"""

from flowhn import bench
from flowhn.config import ModelConfig
from flowhn.routing import SplitMode

DEVICE_PEAK = 5e9  # FLOPs/sec, declared by the operator

cfg = ModelConfig(d_model=64, n_heads=4, d_inner=128, d_state=16,
                  n_blocks=4, seq_len=128, seed=0).validate()

reports = []
for mode in (SplitMode.NO_SPLIT, SplitMode.AE_SPLIT,
             SplitMode.FA_SPLIT, SplitMode.FAC_SPLIT):
    r = bench.measure(cfg, mode, "parallel", DEVICE_PEAK,
                      warmup_iters=3, timed_iters=20, batch_size=4)
    reports.append(r)
    print(f"measured {r.mode:<9} {r.tokens_per_sec:8.0f} tok/s")

print()
print(bench.report_table(reports))

# the two forms of the utilization equation are the same number
r = reports[-1]
a = bench.mfu(r.flops_per_iter, r.iters_per_sec, DEVICE_PEAK)
b = bench.mfu_token_form(r.tokens_per_sec, r.flops_per_token, DEVICE_PEAK)
print(f"\nMFU via FLOPs/iter * iter/s: {a:.6f}")
print(f"MFU via tok/s * FLOPs/tok:   {b:.6f}")

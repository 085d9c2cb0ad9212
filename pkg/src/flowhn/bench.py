"""Throughput and MFU measurement harness.

Times full training iterations (forward + backward, no optimizer) with a
monotonic clock, medians over >= 20 timed iterations after warmup, and
reports tokens/sec plus MFU computed both ways:

    MFU = FLOPs/Iter * Iter/Sec / peak  =  Tokens/Sec * FLOPs/Token / peak

FLOPs/iter uses the analytic forward count times 3 (fwd+bwd convention).
Per-branch busy and idle time come from the block's lane timers. The
device peak FLOP rate is always caller-supplied, never auto-detected.
"""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass, replace

import numpy as np

from . import flops, kernels, model
from .block import BranchTimes
from .config import ModelConfig
from .routing import SplitMode


def mfu(flops_per_iter: float, iters_per_sec: float, device_peak: float) -> float:
    """First-form MFU: achieved FLOP rate over declared device peak."""
    if device_peak <= 0:
        raise ValueError("device peak FLOPs/sec must be positive")
    return flops_per_iter * iters_per_sec / device_peak


def mfu_token_form(tokens_per_sec: float, flops_per_token: float, device_peak: float) -> float:
    """Second-form MFU; algebraically identical to `mfu`."""
    if device_peak <= 0:
        raise ValueError("device peak FLOPs/sec must be positive")
    return tokens_per_sec * flops_per_token / device_peak


@dataclass
class ThroughputReport:
    mode: str
    exec_mode: str
    tokens_per_sec: float
    flops_per_iter: float
    iters_per_sec: float
    flops_per_token: float
    device_peak_flops: float
    mfu: float
    ssm_busy_ms: float
    attn_busy_ms: float
    idle_ms: float
    unreliable: bool = False


def measure(config: ModelConfig, mode: SplitMode, exec_mode: str,
            device_peak: float, warmup_iters: int = 5, timed_iters: int = 20,
            batch_size: int = 4, seed: int = 0) -> ThroughputReport:
    """Median-of-runs training-iteration throughput for one mode."""
    if warmup_iters < 1:
        raise ValueError("need at least one discarded warmup iteration")
    cfg = replace(config, split_mode=mode, exec_mode=exec_mode)
    kernels.warmup()
    params = model.init_params(cfg)
    rng = np.random.default_rng(seed)
    inputs = rng.integers(0, cfg.vocab_size, (batch_size, cfg.seq_len))
    targets = rng.integers(0, cfg.vocab_size, (batch_size, cfg.seq_len))

    def one_iter(times):
        logits, cache = model.forward(cfg, params, inputs, times=times)
        dl = model.loss_grad(logits, targets)
        model.backward(cfg, params, cache, dl, times=times)

    for _ in range(warmup_iters):
        one_iter(None)

    durations = []
    times = BranchTimes()
    for _ in range(timed_iters):
        t0 = time.perf_counter()
        one_iter(times)
        durations.append(time.perf_counter() - t0)

    med = statistics.median(durations)
    cov = statistics.pstdev(durations) / statistics.mean(durations)
    tokens_per_iter = batch_size * cfg.seq_len
    fpi = flops.model_flops_per_iter(cfg, mode, batch_size)
    iters_per_sec = 1.0 / med
    tps = tokens_per_iter * iters_per_sec

    # idle: lane-waiting inside branch regions. With two lanes a region
    # costs 2*elapsed of lane-time; serial regions are busy end to end.
    if exec_mode == "parallel":
        idle = 2 * times.elapsed - times.ssm - times.attn
    else:
        idle = times.elapsed - times.ssm - times.attn
    return ThroughputReport(
        mode=mode.value, exec_mode=exec_mode,
        tokens_per_sec=tps, flops_per_iter=fpi, iters_per_sec=iters_per_sec,
        flops_per_token=fpi / tokens_per_iter, device_peak_flops=device_peak,
        mfu=mfu(fpi, iters_per_sec, device_peak),
        ssm_busy_ms=times.ssm * 1e3, attn_busy_ms=times.attn * 1e3,
        idle_ms=max(0.0, idle) * 1e3,
        unreliable=cov > 0.10,
    )


_COLUMNS = ("mode", "exec", "tps", "mfu", "idle_pct", "flops_per_iter", "unreliable")


def _rows(reports):
    rows = []
    for r in reports:
        busy = r.ssm_busy_ms + r.attn_busy_ms
        idle_pct = 100.0 * r.idle_ms / (busy + r.idle_ms) if busy + r.idle_ms > 0 else 0.0
        rows.append((r.mode, r.exec_mode, f"{r.tokens_per_sec:.1f}", f"{r.mfu:.4f}",
                     f"{idle_pct:.1f}", f"{r.flops_per_iter:.4g}",
                     "yes" if r.unreliable else "no"))
    return rows


def report_table(reports) -> str:
    """Fixed-width comparison table (modes x TPS/MFU/idle)."""
    widths = (10, 9, 12, 8, 9, 15, 10)
    header = "".join(f"{c:<{w}}" for c, w in zip(_COLUMNS, widths))
    lines = [header]
    for row in _rows(reports):
        lines.append("".join(f"{c:<{w}}" for c, w in zip(row, widths)))
    lines.append("flops counted as 3x analytic forward (fwd+bwd convention); "
                 "training iterations")
    return "\n".join(lines)


def report_csv(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(_COLUMNS)
    writer.writerows(_rows(reports))
    return buf.getvalue()

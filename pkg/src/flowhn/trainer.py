"""AdamW training loop: cosine schedule with linear warmup, gradient
accumulation, global-norm clipping, JSONL metrics.

Accumulation semantics: micro-batch gradients (of the mean-per-token loss)
are summed and divided by grad_accum at the update, so grad_accum=k with
micro-batch b applies the same gradient as one batch of k*b sequences.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import flops, model
from .config import ModelConfig, TrainConfig


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear ramp 0 -> peak over the warmup steps, then cosine decay to 0."""
    if step < 0:
        raise ValueError("step must be non-negative")
    warmup = int(cfg.warmup_fraction * cfg.total_steps)
    if step >= cfg.total_steps:
        return 0.0
    if warmup > 0 and step < warmup:
        return cfg.peak_lr * step / warmup
    progress = (step - warmup) / max(1, cfg.total_steps - warmup)
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def _decayed(name: str) -> bool:
    """Weight decay applies to matmul weights only, not biases/gains,
    embeddings, or the state-matrix log parameterization."""
    leaf = name.rsplit(".", 1)[-1]
    return leaf.startswith("w") and "emb" not in name


@dataclass
class OptState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0                 # applied updates so far
    micro: int = 0                # micro-batches in the current accumulation
    accum: dict | None = None     # summed micro-batch gradients (nested)


class Trainer:
    def __init__(self, model_cfg: ModelConfig, train_cfg: TrainConfig, params=None):
        self.model_cfg = model_cfg
        self.cfg = train_cfg
        self.params = params if params is not None else model.init_params(model_cfg)
        self.opt = OptState()
        flat = model.flat_dict(self.params)
        self.opt.m = {k: np.zeros_like(v) for k, v in flat.items()}
        self.opt.v = {k: np.zeros_like(v) for k, v in flat.items()}

    # -- one micro-batch: accumulate; apply AdamW on accumulation boundaries
    def train_step(self, inputs, targets):
        """Returns (loss, applied) where applied is True when parameters moved."""
        logits, cache = model.forward(self.model_cfg, self.params, inputs)
        loss_val = model.loss(logits, targets)
        if not math.isfinite(loss_val):
            name = self._find_nonfinite(logits)
            raise FloatingPointError(f"non-finite loss (first offender: {name})")
        grads = model.backward(self.model_cfg, self.params, cache,
                               model.loss_grad(logits, targets))
        if self.opt.accum is None:
            self.opt.accum = grads
        else:
            model.add_into(self.opt.accum, grads)
        self.opt.micro += 1
        applied = False
        if self.opt.micro >= self.cfg.grad_accum:
            self._apply_update()
            applied = True
        return loss_val, applied

    def _find_nonfinite(self, logits):
        if not np.all(np.isfinite(logits)):
            return "logits"
        for name, p in model.flat_dict(self.params).items():
            if not np.all(np.isfinite(p)):
                return name
        return "loss"

    def _apply_update(self):
        cfg = self.cfg
        lr = lr_at(self.opt.step, cfg)
        gflat = model.flat_dict(self.opt.accum)
        pflat = model.flat_dict(self.params)
        scale = 1.0 / cfg.grad_accum

        if cfg.clip_norm > 0:
            sq = 0.0
            for g in gflat.values():
                sq += float(np.sum((g * scale) ** 2))
            norm = math.sqrt(sq)
            if norm > cfg.clip_norm:
                scale *= cfg.clip_norm / norm

        t = self.opt.step + 1
        bc1 = 1.0 - cfg.beta1 ** t
        bc2 = 1.0 - cfg.beta2 ** t
        for name, p in pflat.items():
            g = gflat[name] * scale
            m = self.opt.m[name]
            v = self.opt.v[name]
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            if _decayed(name):
                update = update + cfg.weight_decay * p
            p -= lr * update
        self.opt.step = t
        self.opt.micro = 0
        self.opt.accum = None

    def current_lr(self) -> float:
        return lr_at(self.opt.step, self.cfg)


def train_loop(model_cfg: ModelConfig, train_cfg: TrainConfig, windows,
               metrics_path=None, ckpt_dir=None, log=None):
    """Run total_steps applied updates; returns (trainer, history of losses).

    Writes one JSON object per applied step to metrics_path:
    {step, loss, lr, tokens_seen, wall_ms, tps, mfu}.
    """
    from .data import iter_batches

    trainer = Trainer(model_cfg, train_cfg)
    batches = iter_batches(windows, train_cfg.batch_size, train_cfg.seed)
    tokens_per_micro = train_cfg.batch_size * model_cfg.seq_len
    fpi = flops.model_flops_per_iter(model_cfg, model_cfg.split_mode,
                                     train_cfg.batch_size) * train_cfg.grad_accum
    history = []
    tokens_seen = 0
    metrics = open(metrics_path, "w") if metrics_path else None
    try:
        while trainer.opt.step < train_cfg.total_steps:
            t0 = time.perf_counter()
            losses = []
            applied = False
            while not applied:
                inputs, targets = next(batches)
                loss_val, applied = trainer.train_step(inputs, targets)
                losses.append(loss_val)
                tokens_seen += tokens_per_micro
            wall = time.perf_counter() - t0
            step_loss = float(np.mean(losses))
            history.append(step_loss)
            tps = tokens_per_micro * train_cfg.grad_accum / wall
            peak = train_cfg.device_peak_flops
            record = {
                "step": trainer.opt.step,
                "loss": round(step_loss, 6),
                "lr": lr_at(trainer.opt.step - 1, train_cfg),
                "tokens_seen": tokens_seen,
                "wall_ms": round(wall * 1e3, 3),
                "tps": round(tps, 1),
                "mfu": (fpi / wall / peak) if peak > 0 else None,
            }
            if metrics:
                metrics.write(json.dumps(record) + "\n")
                metrics.flush()
            if log and (trainer.opt.step % max(1, train_cfg.total_steps // 20) == 0
                        or trainer.opt.step == train_cfg.total_steps):
                log(f"step {trainer.opt.step}/{train_cfg.total_steps} "
                    f"loss {step_loss:.4f} lr {record['lr']:.2e} tps {tps:.0f}")
            if (ckpt_dir and train_cfg.ckpt_every > 0
                    and trainer.opt.step % train_cfg.ckpt_every == 0):
                model.save_checkpoint(trainer.params,
                                      f"{ckpt_dir}/ckpt_step{trainer.opt.step}.flwh")
    finally:
        if metrics:
            metrics.close()
    return trainer, history

"""Model/training/run configuration with strict validation.

Configs live in INI-style files (`key = value` under sections) and can be
overridden by CLI flags; unknown keys are hard errors so typos never pass
silently. Validation collects every violation before raising.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .routing import SplitMode

EXEC_MODES = ("parallel", "serial")


class ConfigError(ValueError):
    """Raised with the full list of config violations."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    d_inner: int = 128
    d_state: int = 16
    n_blocks: int = 4
    seq_len: int = 128
    vocab_size: int = 256
    split_mode: SplitMode = SplitMode.NO_SPLIT
    exec_mode: str = "serial"
    seed: int = 0

    def validate(self):
        problems = []
        for name in ("d_model", "n_heads", "d_inner", "d_state", "vocab_size"):
            if getattr(self, name) < 1:
                problems.append(f"model.{name} must be >= 1")
        if self.n_blocks < 1:
            problems.append("model.n_blocks must be >= 1")
        if self.seq_len < 2:
            problems.append("model.seq_len must be >= 2")
        if self.n_heads >= 1 and self.d_model % self.n_heads != 0:
            problems.append("model.d_model must be divisible by model.n_heads")
        if self.exec_mode not in EXEC_MODES:
            problems.append(f"model.exec_mode must be one of {EXEC_MODES}")
        if problems:
            raise ConfigError(problems)
        return self


@dataclass
class TrainConfig:
    # Defaults follow the 135M/350M training recipe (AdamW 0.9/0.95,
    # lr 3e-4, weight decay 0.1, cosine schedule with 10% linear warmup,
    # gradient accumulation over 8 micro-batches).
    peak_lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.1
    warmup_fraction: float = 0.10
    total_steps: int = 1000
    batch_size: int = 16
    grad_accum: int = 8
    clip_norm: float = 1.0  # 0 disables clipping
    seed: int = 0
    ckpt_every: int = 0  # 0 = final checkpoint only
    device_peak_flops: float = 0.0  # 0 = unknown, mfu logged as null

    def validate(self):
        problems = []
        if not 0.0 < self.warmup_fraction < 1.0:
            problems.append("train.warmup_fraction must be in (0, 1)")
        for name in ("beta1", "beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                problems.append(f"train.{name} must be in (0, 1)")
        if self.peak_lr <= 0:
            problems.append("train.peak_lr must be positive")
        if self.total_steps < 1:
            problems.append("train.total_steps must be >= 1")
        if self.batch_size < 1:
            problems.append("train.batch_size must be >= 1")
        if self.grad_accum < 1:
            problems.append("train.grad_accum must be >= 1")
        if self.clip_norm < 0:
            problems.append("train.clip_norm must be >= 0")
        if problems:
            raise ConfigError(problems)
        return self


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    corpus: str = ""
    out_dir: str = "runs/default"
    checkpoint: str = ""

    def validate(self):
        self.model.validate()
        self.train.validate()
        return self


def _coerce(value: str, target_type):
    if target_type is int:
        return int(value)
    if target_type is float:
        return float(value)
    if target_type is SplitMode:
        return SplitMode.parse(value)
    return value


_SECTION_FIELDS = {
    "model": {f.name: f.type for f in fields(ModelConfig)},
    "train": {f.name: f.type for f in fields(TrainConfig)},
    "paths": {"corpus": str, "out_dir": str, "checkpoint": str},
}

_FIELD_TYPES = {
    "model": {f.name: (SplitMode if f.name == "split_mode" else type(getattr(ModelConfig(), f.name)))
              for f in fields(ModelConfig)},
    "train": {f.name: type(getattr(TrainConfig(), f.name)) for f in fields(TrainConfig)},
    "paths": {"corpus": str, "out_dir": str, "checkpoint": str},
}


def load_run_config(path) -> RunConfig:
    """Parse an INI config file into a RunConfig. Unknown sections/keys error."""
    parser = configparser.ConfigParser()
    text = Path(path).read_text()
    parser.read_string(text)

    problems = []
    values = {"model": {}, "train": {}, "paths": {}}
    for section in parser.sections():
        if section not in _FIELD_TYPES:
            problems.append(f"unknown config section [{section}]")
            continue
        known = _FIELD_TYPES[section]
        for key, raw in parser.items(section):
            if key not in known:
                problems.append(f"unknown key {section}.{key}")
                continue
            try:
                values[section][key] = _coerce(raw, known[key])
            except ValueError as exc:
                problems.append(f"bad value for {section}.{key}: {exc}")
    if problems:
        raise ConfigError(problems)

    cfg = RunConfig(
        model=ModelConfig(**values["model"]),
        train=TrainConfig(**values["train"]),
        corpus=values["paths"].get("corpus", ""),
        out_dir=values["paths"].get("out_dir", "runs/default"),
        checkpoint=values["paths"].get("checkpoint", ""),
    )
    return cfg.validate()


def save_run_config(cfg: RunConfig, path):
    """Write a config snapshot so artifact directories are self-describing."""
    parser = configparser.ConfigParser()
    parser["model"] = {
        f.name: (getattr(cfg.model, f.name).value if f.name == "split_mode"
                 else str(getattr(cfg.model, f.name)))
        for f in fields(ModelConfig)
    }
    parser["train"] = {f.name: str(getattr(cfg.train, f.name)) for f in fields(TrainConfig)}
    parser["paths"] = {"corpus": cfg.corpus, "out_dir": cfg.out_dir, "checkpoint": cfg.checkpoint}
    with open(path, "w") as fh:
        parser.write(fh)


def with_overrides(cfg: RunConfig, model=None, train=None, paths=None) -> RunConfig:
    """Apply flag overrides (dicts of field -> value); flags win over file values."""
    out = replace(cfg)
    if model:
        out.model = replace(cfg.model, **model)
    if train:
        out.train = replace(cfg.train, **train)
    if paths:
        for key, val in paths.items():
            setattr(out, key, val)
    return out.validate()

"""flowhn: parallel attention/SSM hybrid blocks with FLOP-aware token
routing, token fusion, a training loop, and a TPS/MFU benchmark harness."""

from .config import ModelConfig, RunConfig, TrainConfig, load_run_config
from .flops import (FlopProfile, attn_flops_per_token, compute_block_size,
                    profile, ssm_flops_per_token)
from .routing import SplitMode, SplitPlan, plan, scatter_merge

__all__ = [
    "ModelConfig", "TrainConfig", "RunConfig", "load_run_config",
    "FlopProfile", "attn_flops_per_token", "ssm_flops_per_token",
    "compute_block_size", "profile",
    "SplitMode", "SplitPlan", "plan", "scatter_merge",
]

__version__ = "0.1.0"

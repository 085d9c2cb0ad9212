"""Deterministic token routing between the SSM and attention branches.

Each parallel block gets a SplitPlan: which token positions go to the SSM
branch and which to the attention branch. Four strategies are supported:

* NoSplit  - both branches see every token.
* AESplit  - alternating contiguous halves (swap every block).
* FASplit  - static FLOP-proportional split, same every block.
* FACSplit - FLOP-proportional window that circulates through the
             sequence as the block index advances.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class SplitMode(enum.Enum):
    NO_SPLIT = "NoSplit"
    AE_SPLIT = "AESplit"
    FA_SPLIT = "FASplit"
    FAC_SPLIT = "FACSplit"

    @classmethod
    def parse(cls, name: str) -> "SplitMode":
        """Accept canonical names plus the short CLI spellings."""
        aliases = {
            "nosplit": cls.NO_SPLIT, "no_split": cls.NO_SPLIT, "no": cls.NO_SPLIT,
            "aesplit": cls.AE_SPLIT, "ae_split": cls.AE_SPLIT, "ae": cls.AE_SPLIT,
            "fasplit": cls.FA_SPLIT, "fa_split": cls.FA_SPLIT, "fa": cls.FA_SPLIT,
            "facsplit": cls.FAC_SPLIT, "fac_split": cls.FAC_SPLIT, "fac": cls.FAC_SPLIT,
        }
        key = name.strip().lower()
        if key not in aliases:
            raise ValueError(f"unknown split mode {name!r}")
        return aliases[key]


@dataclass(frozen=True)
class SplitPlan:
    """Assignment of token positions to branches for one block.

    Both index lists are ascending. In split modes they partition
    [0, seq_len); in NoSplit both equal the full range.
    """

    block_index: int
    seq_len: int
    ssm_indices: tuple
    attn_indices: tuple

    @property
    def is_split(self) -> bool:
        return len(self.ssm_indices) + len(self.attn_indices) == self.seq_len


def plan(mode: SplitMode, seq_len: int, block_index: int, block_size: int = 0) -> SplitPlan:
    """Build the SplitPlan for one block.

    block_size (from the FLOP model) is only consulted in FA/FAC modes;
    it is the number of tokens handed to the SSM branch.
    """
    if block_index < 0:
        raise ValueError("block_index must be non-negative")
    if mode is SplitMode.NO_SPLIT:
        if seq_len < 1:
            raise ValueError("seq_len must be >= 1")
        full = tuple(range(seq_len))
        return SplitPlan(block_index, seq_len, full, full)

    if seq_len < 2:
        raise ValueError("split modes require seq_len >= 2")

    if mode is SplitMode.AE_SPLIT:
        half = (seq_len + 1) // 2
        first = tuple(range(half))
        second = tuple(range(half, seq_len))
        if block_index % 2 == 0:
            return SplitPlan(block_index, seq_len, first, second)
        return SplitPlan(block_index, seq_len, second, first)

    if not 1 <= block_size <= seq_len - 1:
        raise ValueError(
            f"block_size {block_size} out of range [1, {seq_len - 1}] for {mode.value}"
        )

    if mode is SplitMode.FA_SPLIT:
        ssm = tuple(range(block_size))
        attn = tuple(range(block_size, seq_len))
        return SplitPlan(block_index, seq_len, ssm, attn)

    # FACSplit: contiguous window of block_size positions that advances by
    # block_size each block, wrapping modulo seq_len.
    offset = (block_index * block_size) % seq_len
    window = sorted((offset + k) % seq_len for k in range(block_size))
    ssm = tuple(window)
    in_window = set(window)
    attn = tuple(p for p in range(seq_len) if p not in in_window)
    return SplitPlan(block_index, seq_len, ssm, attn)


def scatter_merge(pln: SplitPlan, ssm_out: np.ndarray, attn_out: np.ndarray, d: int) -> np.ndarray:
    """Assemble fusion inputs: per position a 2d-vector [ssm half | attn half].

    Branch outputs are given per subset token (aligned with the plan's index
    lists, leading batch dims allowed). Positions a branch did not process
    get zeros in that branch's half; in NoSplit both halves are populated
    everywhere.
    """
    if ssm_out.shape[-2] != len(pln.ssm_indices):
        raise ValueError("ssm_out length does not match plan")
    if attn_out.shape[-2] != len(pln.attn_indices):
        raise ValueError("attn_out length does not match plan")
    if ssm_out.shape[-1] != d or attn_out.shape[-1] != d:
        raise ValueError("branch output width does not match d")
    lead = ssm_out.shape[:-2]
    merged = np.zeros(lead + (pln.seq_len, 2 * d), dtype=ssm_out.dtype)
    merged[..., list(pln.ssm_indices), :d] = ssm_out
    merged[..., list(pln.attn_indices), d:] = attn_out
    return merged


def format_plan(pln: SplitPlan) -> str:
    """One stable, diff-friendly text line per block (used by `flowhn route`)."""
    ssm = ",".join(str(i) for i in pln.ssm_indices)
    attn = ",".join(str(i) for i in pln.attn_indices)
    return f"block {pln.block_index}: ssm=[{ssm}] attn=[{attn}]"

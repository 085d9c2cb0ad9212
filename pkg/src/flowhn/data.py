"""Byte-level corpus ingestion and deterministic batching.

A corpus is any file of raw bytes; byte value v is token id v. The stream
is chunked into non-overlapping windows of seq_len+1 bytes (input and
target views overlap by one position); a final partial window is dropped.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def ingest_corpus(path, seq_len: int) -> np.ndarray:
    """Returns an (n_windows, seq_len+1) array of token ids."""
    raw = Path(path).read_bytes()
    if len(raw) == 0:
        raise ValueError(f"{path}: empty corpus")
    width = seq_len + 1
    n = len(raw) // width
    if n == 0:
        raise ValueError(f"{path}: corpus shorter than one {width}-byte window")
    data = np.frombuffer(raw[: n * width], dtype=np.uint8)
    return data.reshape(n, width).astype(np.int64)


def iter_batches(windows: np.ndarray, batch_size: int, seed: int):
    """Endless deterministic batch stream; reshuffles windows each epoch.

    Yields (inputs (B, L), targets (B, L)) with targets shifted one byte.
    """
    n = len(windows)
    if batch_size > n:
        raise ValueError(f"batch_size {batch_size} exceeds {n} available windows")
    rng = np.random.default_rng(seed)
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            batch = windows[order[start:start + batch_size]]
            yield batch[:, :-1], batch[:, 1:]

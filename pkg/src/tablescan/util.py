"""Small shared helpers: pixel rounding, run-length scans, ink measurement."""

from __future__ import annotations

import numpy as np


def round_half_up(x):
    """Round to nearest integer with halves going up.

    The one rounding rule used for all pixel-coordinate arithmetic in this
    package. Works on scalars and numpy arrays; returns int / int64 array.
    """
    if isinstance(x, np.ndarray):
        return np.floor(x + 0.5).astype(np.int64)
    return int(np.floor(x + 0.5))


def bool_runs(mask) -> list[tuple[int, int]]:
    """Maximal runs of True in a 1-D boolean sequence as (start, end) pairs.

    `end` is exclusive. Empty input or all-False input gives [].
    """
    arr = np.asarray(mask, dtype=bool)
    if arr.size == 0 or not arr.any():
        return []
    padded = np.concatenate(([False], arr, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return list(zip(edges[0::2].tolist(), edges[1::2].tolist()))


def join_runs(runs: list[tuple[int, int]], gap: int) -> list[tuple[int, int]]:
    """Merge consecutive (start, end) runs separated by <= gap positions."""
    if not runs:
        return []
    merged = [runs[0]]
    for start, end in runs[1:]:
        if start - merged[-1][1] <= gap:
            merged[-1] = (merged[-1][0], end)
        else:
            merged.append((start, end))
    return merged


def ink_fraction(img: np.ndarray, threshold: int = 128) -> float:
    """Fraction of pixels darker than `threshold`."""
    if img.size == 0:
        return 0.0
    return float(np.count_nonzero(img < threshold)) / img.size

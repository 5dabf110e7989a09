"""Input checks shared by the statistical estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils import check_array


def check_samples(samples, min_size: int = 1, name: str = "samples") -> np.ndarray:
    """1-d array of non-negative integer observations."""
    arr = np.asarray(samples)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size < min_size:
        raise ValueError(f"{name} needs at least {min_size} observations, got {arr.size}")
    arr = check_array(arr.reshape(-1, 1), dtype=None, ensure_min_samples=min_size).ravel()
    if not np.issubdtype(arr.dtype, np.integer):
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError(f"{name} must be integer-valued")
        arr = arr.astype(np.int64)
    if (arr < 0).any():
        raise ValueError(f"{name} must be non-negative")
    return arr


def check_pairs(pairs, min_size: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """Split an ``(N, 2)`` array of integer pairs into its two columns."""
    arr = np.asarray(pairs)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"pairs must have shape (N, 2), got {arr.shape}")
    if arr.shape[0] < min_size:
        raise ValueError(f"need at least {min_size} pairs, got {arr.shape[0]}")
    return check_samples(arr[:, 0], min_size, "first coordinate"), check_samples(arr[:, 1], min_size, "second coordinate")


def check_replica_block(block, name: str = "replica block") -> np.ndarray:
    """``(R, M)`` array: one row of replica values per run."""
    arr = check_array(np.asarray(block), dtype=None, ensure_min_samples=2, ensure_min_features=1)
    if (arr < 0).any():
        raise ValueError(f"{name} must be non-negative")
    return arr


def check_sweep(sweep: dict) -> list[int]:
    """Sorted replica counts of an ``{M: data}`` sweep (at least two)."""
    Ms = sorted(int(m) for m in sweep)
    if len(Ms) < 2:
        raise ValueError("decay verdicts need at least two replica counts in the sweep")
    return Ms

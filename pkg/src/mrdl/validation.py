"""Input validation helpers shared across the library.

All numeric entry points normalize their inputs to contiguous float64
arrays and reject malformed shapes or non-finite payloads with a
ValueError carrying the offending shape, so that callers composing the
ops (or sklearn pipelines wrapping them) get actionable messages.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "as_f64",
    "check_finite",
    "check_ndim",
    "check_shape",
    "check_labels",
]


def as_f64(x, name: str, ndim: int | None = None) -> np.ndarray:
    """Coerce ``x`` to a float64 ndarray, optionally enforcing its rank."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    return arr


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: contains non-finite values")
    return arr


def check_ndim(arr: np.ndarray, ndim: int, name: str) -> np.ndarray:
    if arr.ndim != ndim:
        raise ValueError(f"{name}: expected {ndim}-d array, got shape {arr.shape}")
    return arr


def check_shape(arr: np.ndarray, shape: tuple, name: str) -> np.ndarray:
    """Enforce an exact shape; ``None`` entries are wildcards."""
    if arr.ndim != len(shape) or any(
        want is not None and got != want for got, want in zip(arr.shape, shape)
    ):
        raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
    return arr


def check_labels(y, num_classes: int, name: str = "labels") -> np.ndarray:
    """Validate integer class labels in ``[0, num_classes)``."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError(f"{name}: expected 1-d array, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        cast = arr.astype(np.int64)
        if not np.array_equal(cast, arr):
            raise ValueError(f"{name}: expected integer class indices")
        arr = cast
    if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
        raise ValueError(
            f"{name}: class indices must lie in [0, {num_classes}), "
            f"got range [{arr.min()}, {arr.max()}]"
        )
    return arr.astype(np.int64)

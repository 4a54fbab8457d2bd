"""Input validation helpers for array-facing entry points."""

from __future__ import annotations

import numpy as np

from .errors import DataError, ShapeError


def as_matrix(x, name: str = "X", dtype=None) -> np.ndarray:
    """Coerce to a 2-D float array, rejecting non-finite entries."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    check_finite(arr, name)
    return arr


def as_vector(x, name: str = "x", dtype=None) -> np.ndarray:
    """Coerce to a 1-D float array, rejecting non-finite entries."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    check_finite(arr, name)
    return arr


def check_finite(arr: np.ndarray, name: str) -> None:
    if not np.isfinite(arr).all():
        bad = int(np.flatnonzero(~np.isfinite(arr))[0])
        raise DataError(f"{name} contains a non-finite value at flat index {bad}")


def check_consistent_length(*pairs) -> None:
    """check_consistent_length((name, sized), ...) -> raise on mismatch."""
    lengths = [(name, len(obj)) for name, obj in pairs]
    if len({n for _, n in lengths}) > 1:
        detail = ", ".join(f"{name}={n}" for name, n in lengths)
        raise ShapeError(f"inconsistent lengths: {detail}")

"""Input validation helpers shared across the package."""

from __future__ import annotations

import numbers

import numpy as np


def ensure_finite(name: str, value) -> None:
    if not np.all(np.isfinite(value)):
        raise ValueError(f"{name} must be finite, got {value!r}")


def ensure_positive(name: str, value) -> None:
    ensure_finite(name, value)
    if not np.all(np.asarray(value) > 0):
        raise ValueError(f"{name} must be positive, got {value!r}")


def ensure_nonnegative(name: str, value) -> None:
    ensure_finite(name, value)
    if not np.all(np.asarray(value) >= 0):
        raise ValueError(f"{name} must be nonnegative, got {value!r}")


def ensure_fraction(name: str, value) -> None:
    """Check that value (scalar or array) lies in the closed interval [0, 1]."""
    ensure_finite(name, value)
    arr = np.asarray(value)
    if np.any(arr < 0) or np.any(arr > 1):
        raise ValueError(f"{name} must lie in [0, 1], got {value!r}")


def ensure_int(name: str, value) -> int:
    if isinstance(value, numbers.Integral):
        return int(value)
    if isinstance(value, numbers.Real) and float(value).is_integer():
        return int(value)
    raise ValueError(f"{name} must be an integer, got {value!r}")


def as_float_vector(name: str, values, length: int | None = None) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise ValueError(f"{name} must have length {length}, got {arr.shape[0]}")
    ensure_finite(name, arr)
    return arr


def as_int_vector(name: str, values, length: int | None = None) -> np.ndarray:
    arr = np.asarray(values)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise ValueError(f"{name} must have length {length}, got {arr.shape[0]}")
    if not np.issubdtype(arr.dtype, np.integer):
        rounded = np.asarray(arr, dtype=np.float64)
        ensure_finite(name, rounded)
        if not np.allclose(rounded, np.round(rounded)):
            raise ValueError(f"{name} must contain integers, got {values!r}")
        arr = np.round(rounded).astype(np.int64)
    return arr.astype(np.int64)

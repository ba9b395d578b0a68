"""Small input-validation helpers shared by the public modules."""

from __future__ import annotations

import numpy as np


def as_vector(x, name: str, *, n: int | None = None, positive: bool = False,
              nonnegative: bool = False) -> np.ndarray:
    """Return ``x`` as a finite 1-d float array, raising ``ValueError`` otherwise."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must not be empty")
    if n is not None and arr.size != n:
        raise ValueError(f"{name} has length {arr.size}, expected {n}")
    if np.isnan(arr).any():
        raise ValueError(f"{name} contains NaN")
    if positive and not (np.all(arr > 0) and np.all(np.isfinite(arr))):
        raise ValueError(f"{name} must be strictly positive and finite")
    if nonnegative and not np.all(arr >= 0):
        raise ValueError(f"{name} must be nonnegative")
    return arr


def as_square(a, name: str) -> np.ndarray:
    """Return ``a`` as a finite square float matrix."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValueError(f"{name} must not be empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must have finite entries")
    return arr


def as_mask(K, n: int, name: str = "K") -> np.ndarray:
    """Return a boolean mask of length ``n`` from a mask or an index list."""
    arr = np.asarray(K)
    if arr.dtype == bool:
        if arr.shape != (n,):
            raise ValueError(f"{name} mask has shape {arr.shape}, expected ({n},)")
        return arr.copy()
    mask = np.zeros(n, dtype=bool)
    mask[arr.astype(int).ravel()] = True
    return mask


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not (value > 0 and np.isfinite(value)):
        raise ValueError(f"{name} must be positive and finite, got {value}")
    return value


def to_builtin(obj):
    """Recursively convert numpy scalars and arrays to plain Python objects."""
    if isinstance(obj, dict):
        return {str(k): to_builtin(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_builtin(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_builtin(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def builtin_output(func):
    """Decorator passing a method's return value through :func:`to_builtin`."""
    import functools

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        return to_builtin(func(*args, **kwargs))
    return wrapper

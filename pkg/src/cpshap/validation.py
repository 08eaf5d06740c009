"""Small input-validation helpers used across the public API."""

from __future__ import annotations

import numpy as np

from .exceptions import DimensionError, EmptyDataError, ParameterError


def check_matrix(X, name: str = "X", min_rows: int = 1) -> np.ndarray:
    """Coerce to a 2-D float64 array; zero-width matrices are allowed."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1) if arr.size else arr.reshape(0, 1)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-dimensional, got ndim={arr.ndim}")
    if arr.shape[0] < min_rows:
        raise EmptyDataError(f"{name} needs at least {min_rows} row(s), got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


def check_vector(y, name: str = "y", min_len: int = 1) -> np.ndarray:
    arr = np.asarray(y, dtype=np.float64).ravel()
    if arr.shape[0] < min_len:
        raise EmptyDataError(f"{name} needs at least {min_len} element(s), got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite values")
    return arr


def check_same_rows(X: np.ndarray, y: np.ndarray, xname: str = "X", yname: str = "y") -> None:
    if X.shape[0] != y.shape[0]:
        raise DimensionError(
            f"{xname} has {X.shape[0]} rows but {yname} has {y.shape[0]} entries"
        )


def check_fraction(value: float, name: str, open_left: bool = True, open_right: bool = True) -> float:
    v = float(value)
    lo_ok = v > 0.0 if open_left else v >= 0.0
    hi_ok = v < 1.0 if open_right else v <= 1.0
    if not (lo_ok and hi_ok and np.isfinite(v)):
        lo = "(" if open_left else "["
        hi = ")" if open_right else "]"
        raise ParameterError(f"{name} must lie in {lo}0, 1{hi}, got {value!r}")
    return v


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    try:
        v = int(value)
    except (TypeError, ValueError):
        raise ParameterError(f"{name} must be an integer, got {value!r}") from None
    if v < minimum:
        raise ParameterError(f"{name} must be >= {minimum}, got {value!r}")
    return v


def check_choice(value: str, name: str, choices) -> str:
    if value not in choices:
        raise ParameterError(f"{name} must be one of {tuple(choices)}, got {value!r}")
    return value

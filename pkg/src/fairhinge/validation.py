"""Small input-validation helpers used across the estimator API."""

from __future__ import annotations

import numpy as np

from .errors import DimensionError


def check_ratings(X) -> np.ndarray:
    """Validate a ratings array of shape (n, 3): user, item, value.

    Users and items must be castable to non-negative integers; values must
    be finite. Returns a float64 copy.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != 3:
        raise ValueError(f"ratings must have shape (n, 3), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("ratings contain non-finite entries")
    if np.any(X[:, :2] < 0) or np.any(X[:, :2] != np.floor(X[:, :2])):
        raise ValueError("user and item ids must be non-negative integers")
    return X


def check_pairs(pairs) -> np.ndarray:
    """Validate a (user, item) pair array of shape (n, 2) of integer ids."""
    P = np.asarray(pairs)
    if P.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    if P.ndim != 2 or P.shape[1] != 2:
        raise ValueError(f"pairs must have shape (n, 2), got {P.shape}")
    if np.any(P != np.floor(np.asarray(P, dtype=float))):
        raise ValueError("user and item ids must be integers")
    return P.astype(np.int64)


def check_unit_interval(values, name: str = "values") -> np.ndarray:
    """Ensure all values lie in [0, 1]."""
    v = np.asarray(values, dtype=float)
    if v.size and (np.min(v) < 0.0 or np.max(v) > 1.0):
        raise ValueError(f"{name} must lie in [0, 1]")
    return v


def check_positive(value: float, name: str) -> float:
    if not value > 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    return value


def check_assignment(y, n_variables: int) -> np.ndarray:
    """Validate an assignment vector against a model's variable count."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.shape[0] != n_variables:
        raise DimensionError(
            f"assignment has length {y.shape[0] if y.ndim == 1 else y.shape}, "
            f"model has {n_variables} variables"
        )
    return y

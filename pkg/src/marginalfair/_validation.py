"""Small input-validation helpers used throughout the package."""

import numpy as np

from .errors import InvalidInput


def as_1d_floats(x, name="array", allow_empty=False):
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if not allow_empty and arr.size == 0:
        raise InvalidInput(f"{name} must be nonempty")
    return arr


def require_finite(arr, name="array"):
    arr = np.asarray(arr, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise InvalidInput(f"{name} contains NaN or infinite entries")
    return arr


def check_unit_open(u, name="u"):
    """Validate that every entry of ``u`` lies strictly inside (0, 1)."""
    arr = np.asarray(u, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise InvalidInput(f"{name} must lie strictly inside (0, 1)")
    return arr


def check_prob(p, name="p"):
    arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InvalidInput(f"{name} must lie in [0, 1]")
    return arr


def check_positive(x, name="value"):
    if not np.all(np.asarray(x) > 0):
        raise InvalidInput(f"{name} must be strictly positive")
    return x

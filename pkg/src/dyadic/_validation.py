"""Input validation helpers shared by the public API and the estimators."""
import numbers

import numpy as np


class ConfigurationError(ValueError):
    """Raised for inadmissible schemes, configs or shape mismatches."""


def check_positive(value, name, allow_zero=False):
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ConfigurationError(f"{name} must be a real number, got {value!r}")
    v = float(value)
    if not np.isfinite(v) or v < 0 or (v == 0 and not allow_zero):
        kind = "nonnegative" if allow_zero else "positive"
        raise ConfigurationError(f"{name} must be finite and {kind}, got {value!r}")
    return v


def check_shell_vector(x, name="x"):
    """Return ``x`` as a 1-D finite float64 array with at least one entry."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D shell vector, got shape {arr.shape}")
    if arr.size < 1:
        raise ValueError(f"{name} must contain at least one shell")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return arr


def check_state_matrix(X, n_shells=None, name="X"):
    """Return ``X`` as a finite (n_samples, n_shells) float64 array."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D (n_samples, n_shells), got shape {arr.shape}")
    if arr.shape[1] < 1:
        raise ValueError(f"{name} must have at least one shell column")
    if n_shells is not None and arr.shape[1] != n_shells:
        raise ValueError(f"{name} has {arr.shape[1]} shells, expected {n_shells}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return arr

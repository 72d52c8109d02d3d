"""Exception types and input validation helpers shared across the package."""

import numpy as np
from sklearn.utils import check_array


class InvalidInputError(ValueError):
    """Raised when user-supplied data or parameters are outside their domain."""


class DegenerateRangeError(InvalidInputError):
    """Raised when a grid would have zero width."""


class NumericalDegeneracyError(ArithmeticError):
    """Raised when a computation loses all probability mass for some unit."""


class ConfigurationError(ValueError):
    """Raised for inconsistent command-line or run configuration."""


def as_1d_float(values, name, allow_empty=False):
    try:
        arr = check_array(
            np.atleast_1d(np.asarray(values, dtype=float)),
            ensure_2d=False,
            ensure_min_samples=0 if allow_empty else 1,
            input_name=name,
        )
    except ValueError as exc:
        raise InvalidInputError(str(exc)) from exc
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be one-dimensional, got shape {arr.shape}")
    return arr


def check_positive(arr, name):
    bad = np.flatnonzero(~(arr > 0))
    if bad.size:
        raise InvalidInputError(
            f"{name} must be strictly positive; first offending index {bad[0]} "
            f"has value {arr[bad[0]]!r}"
        )
    return arr


def check_probability_vector(p, name, size=None, atol=1e-8):
    p = as_1d_float(p, name)
    if size is not None and p.shape[0] != size:
        raise InvalidInputError(f"{name} has length {p.shape[0]}, expected {size}")
    if np.any(p < -atol):
        raise InvalidInputError(f"{name} has negative entries")
    if abs(p.sum() - 1.0) > atol:
        raise InvalidInputError(f"{name} sums to {p.sum()!r}, not 1")
    return p


def check_level(level):
    level = float(level)
    if not 0.0 < level < 1.0:
        raise InvalidInputError(f"level must lie in (0, 1), got {level}")
    return level

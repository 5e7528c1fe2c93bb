"""Input validation helpers.

All checks raise InvalidArgumentError with the offending argument named, so
callers can surface precondition failures uniformly (the CLI maps them to
exit code 2).
"""
from __future__ import annotations

import numbers

import numpy as np

from .errors import InvalidArgumentError


def check_positive(name: str, value, *, strict: bool = True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise InvalidArgumentError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise InvalidArgumentError(f"{name} must be > 0, got {value}")
    if not strict and value < 0:
        raise InvalidArgumentError(f"{name} must be >= 0, got {value}")
    return value


def check_int_range(name: str, value, *, low: int | None = None, high: int | None = None) -> int:
    if not isinstance(value, numbers.Integral):
        raise InvalidArgumentError(f"{name} must be an integer, got {value!r}")
    value = int(value)
    if low is not None and value < low:
        raise InvalidArgumentError(f"{name} must be >= {low}, got {value}")
    if high is not None and value > high:
        raise InvalidArgumentError(f"{name} must be <= {high}, got {value}")
    return value


def check_array(
    name: str,
    arr,
    *,
    shape: tuple[int | None, ...] | None = None,
    ndim: int | None = None,
    finite: bool = True,
    dtype=np.float64,
) -> np.ndarray:
    """Coerce to a numpy array of `dtype` and validate shape/finiteness.

    `shape` entries equal to None match any extent.
    """
    try:
        out = np.asarray(arr, dtype=dtype)
    except (TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"{name} is not coercible to {dtype}: {exc}") from exc
    if ndim is not None and out.ndim != ndim:
        raise InvalidArgumentError(f"{name} must have {ndim} dimensions, got {out.ndim}")
    if shape is not None:
        if out.ndim != len(shape):
            raise InvalidArgumentError(
                f"{name} must have shape {shape}, got {out.shape}"
            )
        for axis, want in enumerate(shape):
            if want is not None and out.shape[axis] != want:
                raise InvalidArgumentError(
                    f"{name} must have shape {shape}, got {out.shape}"
                )
    if finite and out.dtype.kind == "f" and not np.all(np.isfinite(out)):
        raise InvalidArgumentError(f"{name} contains NaN or Inf")
    return out


def check_choice(name: str, value, choices):
    if value not in choices:
        raise InvalidArgumentError(f"{name} must be one of {sorted(choices)}, got {value!r}")
    return value


def readonly(arr: np.ndarray) -> np.ndarray:
    """Return `arr` marked read-only (own copy if needed to avoid aliasing)."""
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out

"""Input validation helpers.

Sequences travel through the package as plain numpy arrays:

* 2D skeleton sequence: shape (N, T, 2)
* 3D skeleton sequence: shape (N, T, 3)
* batches add a leading axis, e.g. (B, N, T, 2)

These helpers normalise dtypes, enforce shapes and reject non-finite
values so the numeric code can assume clean inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import BadLength, ShapeMismatch


def as_float_array(x, name: str = "array") -> np.ndarray:
    """Coerce to a float64 ndarray and reject NaN/Inf."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_sequence(x, dim: int, n_joints: int | None = 15, name: str = "sequence") -> np.ndarray:
    """Validate a single skeleton sequence of shape (N, T, dim)."""
    arr = as_float_array(x, name)
    if arr.ndim != 3 or arr.shape[-1] != dim:
        raise ShapeMismatch(f"{name} must have shape (N, T, {dim}), got {arr.shape}")
    if n_joints is not None and arr.shape[0] != n_joints:
        raise ShapeMismatch(f"{name} must have {n_joints} joints, got {arr.shape[0]}")
    if arr.shape[1] < 1:
        raise ShapeMismatch(f"{name} must have at least one frame")
    return arr


def check_clip_batch(x, dim: int = 2, n_joints: int | None = 15, name: str = "clips") -> np.ndarray:
    """Validate a batch of sequences, accepting (N, T, d) or (B, N, T, d).

    Returns an array of shape (B, N, T, d); a single sequence becomes a
    batch of one.
    """
    arr = as_float_array(x, name)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != dim:
        raise ShapeMismatch(f"{name} must have shape (B, N, T, {dim}), got {arr.shape}")
    if n_joints is not None and arr.shape[1] != n_joints:
        raise ShapeMismatch(f"{name} must have {n_joints} joints, got {arr.shape[1]}")
    return arr


def check_frame_count(t: int, multiple_of: int = 8, name: str = "sequence") -> None:
    if t < multiple_of or t % multiple_of != 0:
        raise BadLength(f"{name} length {t} is not a positive multiple of {multiple_of}")

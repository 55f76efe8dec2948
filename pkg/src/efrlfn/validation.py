"""Input validation helpers shared across the public API."""

from __future__ import annotations

import numpy as np

__all__ = ["check_image", "check_same_shape", "check_vector", "check_matrix"]


def check_image(arr, name: str = "image") -> np.ndarray:
    """Coerce to a float (c, h, w) image array.

    Accepts (c, h, w) or a single-channel (h, w) plane, which is promoted
    to one channel. Values are not rescaled.
    """
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise ValueError(f"{name} must be (c, h, w) or (h, w), got shape {a.shape}")
    if a.shape[1] < 1 or a.shape[2] < 1:
        raise ValueError(f"{name} has an empty spatial plane: {a.shape}")
    return a


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape != b.shape:
        raise ValueError(f"{what} must have identical shapes, got {a.shape} and {b.shape}")


def check_vector(x, name: str = "x", min_len: int = 1) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if v.size < min_len:
        raise ValueError(f"{name} needs at least {min_len} entries, got {v.size}")
    return v


def check_matrix(x, name: str = "X") -> np.ndarray:
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    return m

"""Separable bicubic resampling with the Keys cubic kernel (a = -0.5).

Output index i samples the source at position i * (in_size / out_size),
so a same-size resize is the identity and a 2x upscale evaluates the
kernel at half-integer offsets. Out-of-range taps clamp to the border.
Used both as the classical upscaling baseline and as the synthetic
low-resolution degradation.
"""

from __future__ import annotations

import numpy as np

from .validation import check_image

__all__ = ["keys_kernel", "bicubic_resize", "resize_weights"]

_A = -0.5


def keys_kernel(s):
    """Cubic convolution kernel value at offset ``s`` (a = -0.5)."""
    s = np.abs(np.asarray(s, dtype=np.float64))
    out = np.zeros_like(s)
    near = s <= 1.0
    far = (s > 1.0) & (s < 2.0)
    out[near] = (_A + 2.0) * s[near] ** 3 - (_A + 3.0) * s[near] ** 2 + 1.0
    out[far] = _A * (s[far] ** 3 - 5.0 * s[far] ** 2 + 8.0 * s[far] - 4.0)
    return out


def resize_weights(in_n: int, out_n: int) -> np.ndarray:
    """Dense (out_n, in_n) row-stochastic resampling matrix for one axis."""
    if out_n < 1:
        raise ValueError(f"output size must be >= 1, got {out_n}")
    src = np.arange(out_n, dtype=np.float64) * (in_n / out_n)
    base = np.floor(src).astype(np.intp)
    w = np.zeros((out_n, in_n))
    for tap in (-1, 0, 1, 2):
        idx = np.clip(base + tap, 0, in_n - 1)
        weight = keys_kernel(src - (base + tap))
        np.add.at(w, (np.arange(out_n), idx), weight)
    return w


def bicubic_resize(img, out_h: int, out_w: int) -> np.ndarray:
    """Resample a (c, h, w) image; output is clamped to [0, 1]."""
    a = check_image(img, "bicubic_resize input")
    c, h, w = a.shape
    wh = resize_weights(h, out_h)
    ww = resize_weights(w, out_w)
    out = np.einsum("oh,chw,pw->cop", wh, a, ww, optimize=True)
    return np.clip(out, 0.0, 1.0)

"""Reference-based and content-descriptive image quality metrics.

Conventions (documented so scores are comparable): PSNR uses the mean
squared error over all RGB channels jointly with peak 1.0; SSIM operates
on the BT.601 luma plane with the standard 11-tap Gaussian window; SI/TI
follow the P.910 convention (luma, population std, max over frames).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .validation import check_image, check_same_shape, check_vector

__all__ = [
    "PSNR_CAP_DB",
    "SsimParams",
    "luma",
    "psnr",
    "ssim",
    "si",
    "ti",
    "video_si_ti",
    "pearson",
]

#: Sentinel returned by :func:`psnr` when the images are identical (MSE 0).
PSNR_CAP_DB = math.inf

_BT601 = np.array([0.299, 0.587, 0.114])


def luma(img) -> np.ndarray:
    """BT.601 luma plane of a (3, h, w) image (identity for 1 channel)."""
    a = check_image(img, "image")
    if a.shape[0] == 1:
        return a[0]
    if a.shape[0] != 3:
        raise ValueError(f"expected 1 or 3 channels, got {a.shape[0]}")
    return np.tensordot(_BT601, a, axes=([0], [0]))


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs return the cap sentinel."""
    x = check_image(a, "a")
    y = check_image(b, "b")
    check_same_shape(x, y, "psnr inputs")
    if peak <= 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return g / g.sum()


@dataclass(frozen=True)
class SsimParams:
    """Standard SSIM constants: 11-tap Gaussian (sigma 1.5), K1/K2, peak 1."""

    window_size: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    peak: float = 1.0

    def __post_init__(self):
        if self.window_size % 2 == 0 or self.window_size < 1:
            raise ValueError(f"window size must be odd and >= 1, got {self.window_size}")

    def window(self) -> np.ndarray:
        return _gaussian_window(self.window_size, self.sigma)


def _filter_valid(plane: np.ndarray, g: np.ndarray) -> np.ndarray:
    # Separable Gaussian filtering, valid positions only.
    v = np.lib.stride_tricks.sliding_window_view(plane, g.size, axis=0) @ g
    return np.lib.stride_tricks.sliding_window_view(v, g.size, axis=1) @ g


def ssim(a, b, params: SsimParams | None = None) -> float:
    """Mean local structural similarity over valid window positions.

    Multi-channel inputs are converted to luma first.
    """
    p = params or SsimParams()
    x = luma(a).astype(np.float64)
    y = luma(b).astype(np.float64)
    check_same_shape(x, y, "ssim inputs")
    if min(x.shape) < p.window_size:
        raise ValueError(
            f"image {x.shape} is smaller than the {p.window_size}-tap window"
        )
    g = p.window()
    mu_x = _filter_valid(x, g)
    mu_y = _filter_valid(y, g)
    xx = _filter_valid(x * x, g) - mu_x * mu_x
    yy = _filter_valid(y * y, g) - mu_y * mu_y
    xy = _filter_valid(x * y, g) - mu_x * mu_y
    c1 = (p.k1 * p.peak) ** 2
    c2 = (p.k2 * p.peak) ** 2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def _sobel_valid(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(plane, (3, 3))
    return np.tensordot(win, kernel, axes=([2, 3], [0, 1]))


def si(frame) -> float:
    """Spatial information: population std of the interior Sobel magnitude."""
    y = luma(frame)
    if y.shape[0] < 3 or y.shape[1] < 3:
        raise ValueError(f"si needs at least a 3x3 frame, got {y.shape}")
    gx = _sobel_valid(y, _SOBEL_X)
    gy = _sobel_valid(y, _SOBEL_X.T)
    return float(np.std(np.sqrt(gx * gx + gy * gy)))


def ti(prev, cur) -> float:
    """Temporal information: population std of the luma frame difference."""
    yp = luma(prev)
    yc = luma(cur)
    check_same_shape(yp, yc, "ti frames")
    return float(np.std(yc - yp))


def video_si_ti(frames) -> tuple[float, float]:
    """Per-video SI/TI: the max over frames (TI over consecutive pairs)."""
    frames = list(frames)
    if not frames:
        raise ValueError("video_si_ti needs at least one frame")
    si_max = max(si(f) for f in frames)
    ti_max = 0.0
    for prev, cur in zip(frames, frames[1:]):
        ti_max = max(ti_max, ti(prev, cur))
    return si_max, ti_max


def pearson(x, y) -> float:
    """Sample Pearson correlation of two equal-length vectors."""
    xv = check_vector(x, "x", min_len=2)
    yv = check_vector(y, "y", min_len=2)
    if xv.size != yv.size:
        raise ValueError(f"length mismatch: {xv.size} vs {yv.size}")
    dx = xv - xv.mean()
    dy = yv - yv.mean()
    sx = float(np.sqrt(np.sum(dx * dx)))
    sy = float(np.sqrt(np.sum(dy * dy)))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("pearson is undefined for zero-variance input")
    return float(np.sum(dx * dy) / (sx * sy))

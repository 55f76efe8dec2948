"""Composite training objective: Charbonnier + perceptual + Sobel edge terms.

All losses are means over elements, computed on RGB tensors in [0, 1],
and differentiable end to end. The perceptual term compares features from
a pluggable fixed extractor; gradients flow through the extractor to its
input but never into its weights.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, ShapeError, conv2d, max_pool2d

__all__ = [
    "LossWeights",
    "charbonnier",
    "sobel_map",
    "sobel_loss",
    "perceptual_loss",
    "composite_loss",
    "loss_ablation_suite",
    "LOSS_VARIANTS",
    "IdentityExtractor",
    "ConvStackExtractor",
    "VGG19_CONV5_4_LAYOUT",
]

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the composite objective (all >= 0, epsilon > 0).

    Defaults are the training coefficients: 1 on the Charbonnier term,
    1e-3 on the perceptual term, 1e-1 on the edge term.
    """

    lambda_charb: float = 1.0
    lambda_vgg: float = 1e-3
    lambda_sobel: float = 1e-1
    epsilon: float = 1e-3

    def __post_init__(self):
        if min(self.lambda_charb, self.lambda_vgg, self.lambda_sobel) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.epsilon <= 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")


def _check_pair(sr: Tensor, hr: Tensor, what: str) -> None:
    if sr.shape != hr.shape:
        raise ShapeError(f"{what}: shapes {sr.shape} and {hr.shape} differ")


def charbonnier(sr: Tensor, hr: Tensor, eps: float = 1e-3) -> Tensor:
    """Mean of sqrt(diff^2 + eps^2); equals eps exactly when sr == hr."""
    _check_pair(sr, hr, "charbonnier")
    if eps <= 0:
        raise ValueError(f"charbonnier eps must be > 0, got {eps}")
    d = sr - hr
    return ((d * d) + eps * eps).sqrt().mean()


def sobel_map(img: Tensor) -> tuple[Tensor, Tensor]:
    """Per-channel horizontal/vertical edge responses (zero padding 1)."""
    if img.data.ndim != 4:
        raise ShapeError(f"sobel_map expects NCHW, got shape {img.shape}")
    n, c, h, w = img.shape
    if h < 3 or w < 3:
        raise ShapeError(f"sobel_map needs at least 3x3 images, got {h}x{w}")
    flat = img.reshape(n * c, 1, h, w)
    dtype = img.data.dtype
    kx = Tensor(SOBEL_X.reshape(1, 1, 3, 3).astype(dtype))
    ky = Tensor(SOBEL_Y.reshape(1, 1, 3, 3).astype(dtype))
    gx = conv2d(flat, kx, padding=1).reshape(n, c, h, w)
    gy = conv2d(flat, ky, padding=1).reshape(n, c, h, w)
    return gx, gy


def sobel_loss(sr: Tensor, hr: Tensor) -> Tensor:
    """Mean squared difference of edge maps, summed over both directions.

    Responses are taken only where the 3x3 window is fully supported
    (the interior), so flat fields always score 0 and constant offsets
    do not register as edges.
    """
    _check_pair(sr, hr, "sobel_loss")
    gx_sr, gy_sr = _sobel_valid(sr)
    gx_hr, gy_hr = _sobel_valid(hr)
    dx = gx_hr - gx_sr
    dy = gy_hr - gy_sr
    return (dx * dx).mean() + (dy * dy).mean()


def _sobel_valid(img: Tensor) -> tuple[Tensor, Tensor]:
    if img.data.ndim != 4:
        raise ShapeError(f"sobel_loss expects NCHW, got shape {img.shape}")
    n, c, h, w = img.shape
    if h < 3 or w < 3:
        raise ShapeError(f"sobel_loss needs at least 3x3 images, got {h}x{w}")
    flat = img.reshape(n * c, 1, h, w)
    dtype = img.data.dtype
    kx = Tensor(SOBEL_X.reshape(1, 1, 3, 3).astype(dtype))
    ky = Tensor(SOBEL_Y.reshape(1, 1, 3, 3).astype(dtype))
    gx = conv2d(flat, kx).reshape(n, c, h - 2, w - 2)
    gy = conv2d(flat, ky).reshape(n, c, h - 2, w - 2)
    return gx, gy


def perceptual_loss(sr: Tensor, hr: Tensor, extractor: Callable[[Tensor], Tensor]) -> Tensor:
    """Mean absolute difference of extractor features."""
    _check_pair(sr, hr, "perceptual_loss")
    return (extractor(hr) - extractor(sr)).abs().mean()


def composite_loss(
    sr: Tensor,
    hr: Tensor,
    weights: LossWeights,
    extractor: Callable[[Tensor], Tensor],
) -> Tensor:
    """Weighted sum of the three terms; differentiable end to end."""
    total = weights.lambda_charb * charbonnier(sr, hr, weights.epsilon)
    if weights.lambda_vgg:
        total = total + weights.lambda_vgg * perceptual_loss(sr, hr, extractor)
    if weights.lambda_sobel:
        total = total + weights.lambda_sobel * sobel_loss(sr, hr)
    return total


LOSS_VARIANTS = (
    "full",
    "no_charb",
    "no_vgg",
    "no_sobel",
    "l1",
    "l2",
    "lpips_placeholder",
)


def loss_ablation_suite(
    variant: str,
    weights: LossWeights | None = None,
    extractor: Callable[[Tensor], Tensor] | None = None,
) -> Callable[[Tensor, Tensor], Tensor]:
    """Objective for the training ablation grid.

    ``lpips_placeholder`` is the perceptual term alone with a caller-supplied
    extractor (pretrained feature networks are external inputs).
    """
    if variant not in LOSS_VARIANTS:
        raise ValueError(f"unknown loss variant {variant!r}; expected one of {LOSS_VARIANTS}")
    w = weights or LossWeights()
    ext = extractor if extractor is not None else IdentityExtractor()

    if variant == "l1":
        return lambda sr, hr: (sr - hr).abs().mean()
    if variant == "l2":
        return lambda sr, hr: ((sr - hr) * (sr - hr)).mean()
    if variant == "lpips_placeholder":
        if extractor is None:
            raise ValueError("lpips_placeholder requires a feature extractor")
        return lambda sr, hr: perceptual_loss(sr, hr, ext)

    zeroed = {
        "full": w,
        "no_charb": LossWeights(0.0, w.lambda_vgg, w.lambda_sobel, w.epsilon),
        "no_vgg": LossWeights(w.lambda_charb, 0.0, w.lambda_sobel, w.epsilon),
        "no_sobel": LossWeights(w.lambda_charb, w.lambda_vgg, 0.0, w.epsilon),
    }[variant]
    return lambda sr, hr: composite_loss(sr, hr, zeroed, ext)


# ---- feature extractors -------------------------------------------------------


class IdentityExtractor:
    """Pass-through features; reduces the perceptual term to mean |diff|."""

    name = "identity"

    def __call__(self, img: Tensor) -> Tensor:
        return img


class ConvStackExtractor:
    """Fixed (non-trainable) conv/relu/maxpool feature pipeline.

    Weights are held as plain constants so gradients flow to the input
    only. Construct with ``seeded`` for tests or ``from_arrays`` when
    loading externally supplied weights (e.g. a VGG-19 export).
    """

    def __init__(self, layers: Sequence[tuple], name: str = "conv_stack"):
        self.layers = list(layers)
        self.name = name

    def __call__(self, img: Tensor) -> Tensor:
        t = img
        for layer in self.layers:
            kind = layer[0]
            if kind == "conv":
                _, w, b, pad = layer
                t = conv2d(t, w, b, padding=pad)
            elif kind == "relu":
                t = t.relu()
            elif kind == "maxpool":
                _, k, s = layer
                t = max_pool2d(t, k, s)
            else:
                raise ValueError(f"unknown extractor layer kind {kind!r}")
        return t

    @classmethod
    def seeded(
        cls,
        channels: Sequence[int] = (8,),
        in_channels: int = 3,
        seed: int = 0,
        dtype=np.float64,
    ) -> "ConvStackExtractor":
        """Small deterministic conv+relu stack for testing."""
        rng = np.random.default_rng(seed)
        layers: list[tuple] = []
        cin = in_channels
        for cout in channels:
            bound = np.sqrt(6.0 / (cin * 9))
            w = Tensor(rng.uniform(-bound, bound, size=(cout, cin, 3, 3)).astype(dtype))
            b = Tensor(np.zeros(cout, dtype=dtype))
            layers.append(("conv", w, b, 1))
            layers.append(("relu",))
            cin = cout
        return cls(layers, name=f"seeded_conv_stack[{','.join(map(str, channels))}]")

    @classmethod
    def from_arrays(
        cls,
        tensors: dict[str, np.ndarray],
        layout: Sequence[tuple],
        name: str,
        normalize: tuple[tuple[float, float, float], tuple[float, float, float]] | None = None,
    ) -> "ConvStackExtractor":
        """Build from named weight arrays following ``layout``.

        Layout entries are ("conv", name, pad), ("relu",) or
        ("maxpool", k, s); conv entries consume ``<name>.weight`` and
        ``<name>.bias`` arrays. ``normalize`` optionally prepends a fixed
        per-channel (mean, std) normalization realized as a 1x1 conv.
        """
        layers: list[tuple] = []
        if normalize is not None:
            mean, std = normalize
            c = len(mean)
            w = np.zeros((c, c, 1, 1))
            b = np.empty(c)
            for i in range(c):
                w[i, i, 0, 0] = 1.0 / std[i]
                b[i] = -mean[i] / std[i]
            layers.append(("conv", Tensor(w), Tensor(b), 0))
        for entry in layout:
            if entry[0] == "conv":
                _, lname, pad = entry
                try:
                    w = tensors[f"{lname}.weight"]
                    b = tensors[f"{lname}.bias"]
                except KeyError as exc:
                    raise ValueError(f"missing extractor tensor {exc.args[0]!r}") from None
                layers.append(("conv", Tensor(w), Tensor(b), pad))
            else:
                layers.append(entry)
        return cls(layers, name=name)


def _vgg19_layout() -> list[tuple]:
    layout: list[tuple] = []
    blocks = ((2, "conv1"), (2, "conv2"), (4, "conv3"), (4, "conv4"), (4, "conv5"))
    for depth, prefix in blocks:
        for i in range(1, depth + 1):
            layout.append(("conv", f"{prefix}_{i}", 1))
            layout.append(("relu",))
        if prefix != "conv5":
            layout.append(("maxpool", 2, 2))
    return layout  # ends at the post-activation conv5_4 tap, before pool5


#: Layer sequence for an externally supplied VGG-19 feature extractor,
#: tapped at the ReLU output of its deepest 3x3 conv ("conv5_4").
VGG19_CONV5_4_LAYOUT = _vgg19_layout()

#: Standard channel statistics for [0, 1] RGB inputs to VGG-style extractors.
IMAGENET_NORMALIZE = ((0.485, 0.456, 0.406), (0.229, 0.224, 0.225))

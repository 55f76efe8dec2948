"""Efficient residual local feature network for real-time super-resolution.

Pipeline: a 3x3 feature extractor, B residual refinement blocks, a long
skip from the extractor output to the reconstruction input, then a 3x3
convolution into in_channels*scale^2 channels followed by pixel shuffle.

Each block applies three stacked [3x3 conv -> activation] refinement
stages (no inner skips), a channel or spatial attention gate, a single
3x3 smoothing convolution, and one block-level residual connection added
after the smoothing step.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .tensor import (
    ACTIVATIONS,
    Tensor,
    ShapeError,
    activation,
    conv2d,
    global_avg_pool,
    bilinear_resize,
    max_pool2d,
    pixel_shuffle,
)

__all__ = [
    "ModelConfig",
    "Model",
    "build_model",
    "param_count",
    "parameter_schema",
    "eca",
    "esa",
    "erlfb_forward",
    "forward",
    "dump_features",
    "DEFAULT_CHANNELS",
    "DEFAULT_BLOCKS",
]

ATTENTION_KINDS = ("eca", "esa")

# Smallest channel width that keeps the default-depth model in its
# ~0.37M-parameter design budget (B=6, scale=2 -> 361,852 parameters).
DEFAULT_CHANNELS = 40
DEFAULT_BLOCKS = 6


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters."""

    channels: int = DEFAULT_CHANNELS
    blocks: int = DEFAULT_BLOCKS
    scale: int = 2
    activation: str = "tanh"
    attention: str = "eca"
    in_channels: int = 3
    seed: int = 0

    def validate(self) -> None:
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")
        if self.blocks < 1:
            raise ValueError(f"blocks must be >= 1, got {self.blocks}")
        if self.scale not in (2, 4):
            raise ValueError(f"scale must be 2 or 4, got {self.scale}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(
                f"activation must be one of {sorted(ACTIVATIONS)}, got {self.activation!r}"
            )
        if self.attention not in ATTENTION_KINDS:
            raise ValueError(
                f"attention must be one of {ATTENTION_KINDS}, got {self.attention!r}"
            )
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {self.in_channels}")


def _esa_inner(channels: int) -> int:
    # Channel-reduced width of the spatial-attention branch.
    return max(1, channels // 4)


def parameter_schema(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) schema; serialization depends on this order."""
    config.validate()
    c = config.channels
    entries: list[tuple[str, tuple[int, ...]]] = [
        ("extract.weight", (c, config.in_channels, 3, 3)),
        ("extract.bias", (c,)),
    ]
    f = _esa_inner(c)
    for b in range(1, config.blocks + 1):
        for j in (1, 2, 3):
            entries.append((f"block{b}.refine{j}.weight", (c, c, 3, 3)))
            entries.append((f"block{b}.refine{j}.bias", (c,)))
        if config.attention == "eca":
            entries.append((f"block{b}.att.gate.weight", (c, c, 1, 1)))
            entries.append((f"block{b}.att.gate.bias", (c,)))
        else:
            entries.append((f"block{b}.att.reduce.weight", (f, c, 1, 1)))
            entries.append((f"block{b}.att.reduce.bias", (f,)))
            entries.append((f"block{b}.att.down.weight", (f, f, 3, 3)))
            entries.append((f"block{b}.att.down.bias", (f,)))
            entries.append((f"block{b}.att.group.weight", (f, f, 3, 3)))
            entries.append((f"block{b}.att.group.bias", (f,)))
            entries.append((f"block{b}.att.expand.weight", (c, f, 1, 1)))
            entries.append((f"block{b}.att.expand.bias", (c,)))
        entries.append((f"block{b}.smooth.weight", (c, c, 3, 3)))
        entries.append((f"block{b}.smooth.bias", (c,)))
    out_c = config.in_channels * config.scale * config.scale
    entries.append(("recon.weight", (out_c, c, 3, 3)))
    entries.append(("recon.bias", (out_c,)))
    return entries


def param_count(config: ModelConfig) -> int:
    """Exact number of scalar parameters implied by the schema."""
    return sum(int(np.prod(shape)) for _, shape in parameter_schema(config))


class Model:
    """A built network: config plus its named parameter tensors."""

    def __init__(self, config: ModelConfig, parameters: Mapping[str, Tensor]):
        self.config = config
        self.parameters: dict[str, Tensor] = dict(parameters)
        expected = parameter_schema(config)
        names = list(self.parameters)
        if names != [n for n, _ in expected]:
            raise ValueError("parameter names do not match the schema order")
        for name, shape in expected:
            if self.parameters[name].shape != shape:
                raise ValueError(
                    f"parameter {name} has shape {self.parameters[name].shape}, expected {shape}"
                )

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters.values())

    def zero_grad(self) -> None:
        for p in self.parameters.values():
            p.zero_grad()

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters.values():
            p.requires_grad = flag

    def astype(self, dtype) -> "Model":
        params = {
            name: Tensor(p.data.astype(dtype), requires_grad=p.requires_grad)
            for name, p in self.parameters.items()
        }
        return Model(self.config, params)


def build_model(config: ModelConfig, dtype=np.float64) -> Model:
    """Initialize parameters: Kaiming-uniform fan-in weights, zero biases.

    Deterministic for a given config seed; draws follow schema order.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    params: dict[str, Tensor] = {}
    for name, shape in parameter_schema(config):
        if name.endswith(".bias"):
            data = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = float(np.sqrt(6.0 / fan_in))
            data = rng.uniform(-bound, bound, size=shape).astype(dtype)
        params[name] = Tensor(data, requires_grad=True)
    return Model(config, params)


def eca(features: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Channel attention: sigmoid(1x1 conv of the global average pool).

    The gate lies in (0, 1) per channel and scales every spatial position.
    """
    if features.data.ndim != 4:
        raise ShapeError(f"eca expects NCHW features, got shape {features.shape}")
    c = features.shape[1]
    if weight.shape != (c, c, 1, 1):
        raise ShapeError(
            f"eca weight must be ({c}, {c}, 1, 1) for {c}-channel features, got {weight.shape}"
        )
    gate = conv2d(global_avg_pool(features), weight, bias).sigmoid()
    return features * gate


def esa(features: Tensor, weights: Mapping[str, Tensor]) -> Tensor:
    """Spatial attention: reduce 1x1, strided 3x3 + max pool, a 3x3 conv
    group, bilinear upsample back to the input grid, 1x1 restore, sigmoid.
    """
    if features.data.ndim != 4:
        raise ShapeError(f"esa expects NCHW features, got shape {features.shape}")
    n, c, h, w = features.shape
    if h < 5 or w < 5:
        raise ShapeError(
            f"esa needs spatial dims >= 5 for its stride/pool chain, got {h}x{w}"
        )
    r = conv2d(features, weights["reduce.weight"], weights["reduce.bias"])
    d = conv2d(r, weights["down.weight"], weights["down.bias"], stride=2, padding=1)
    p = max_pool2d(d, kernel=3, stride=2)
    g = conv2d(p, weights["group.weight"], weights["group.bias"], padding=1).relu()
    u = bilinear_resize(g, h, w)
    e = conv2d(u, weights["expand.weight"], weights["expand.bias"])
    return features * e.sigmoid()


def _block_weights(model: Model, index: int) -> dict[str, Tensor]:
    prefix = f"block{index}."
    plen = len(prefix)
    return {
        name[plen:]: p for name, p in model.parameters.items() if name.startswith(prefix)
    }


def erlfb_forward(
    block_weights: Mapping[str, Tensor],
    x: Tensor,
    activation_kind: str,
    attention_kind: str,
) -> Tensor:
    """One residual block: 3x [conv3x3 -> activation], attention gate,
    single 3x3 smoothing conv, plus the block-level residual."""
    att = _erlfb_attention(block_weights, x, activation_kind, attention_kind)
    s = conv2d(att, block_weights["smooth.weight"], block_weights["smooth.bias"], padding=1)
    return s + x


def _erlfb_attention(
    block_weights: Mapping[str, Tensor],
    x: Tensor,
    activation_kind: str,
    attention_kind: str,
) -> Tensor:
    t = x
    for j in (1, 2, 3):
        t = conv2d(
            t,
            block_weights[f"refine{j}.weight"],
            block_weights[f"refine{j}.bias"],
            padding=1,
        )
        t = activation(t, activation_kind)
    if attention_kind == "eca":
        return eca(t, block_weights["att.gate.weight"], block_weights["att.gate.bias"])
    att_weights = {
        key[len("att."):]: v for key, v in block_weights.items() if key.startswith("att.")
    }
    return esa(t, att_weights)


def forward(
    model: Model,
    lr: Tensor,
    clamp: bool = False,
    _capture: dict | None = None,
    _capture_indices: frozenset | None = None,
) -> Tensor:
    """Upscale a batch of low-resolution images by the config scale.

    Training leaves the output unclamped; pass ``clamp=True`` for
    inference and metric evaluation.
    """
    cfg = model.config
    if lr.data.ndim != 4 or lr.shape[1] != cfg.in_channels:
        raise ShapeError(
            f"forward expects (n, {cfg.in_channels}, h, w) input, got shape {lr.shape}"
        )
    p = model.parameters
    f0 = conv2d(lr, p["extract.weight"], p["extract.bias"], padding=1)
    f = f0
    for b in range(1, cfg.blocks + 1):
        bw = _block_weights(model, b)
        if _capture is not None and _capture_indices and b in _capture_indices:
            att = _erlfb_attention(bw, f, cfg.activation, cfg.attention)
            _capture[b] = att.detach()
            f = conv2d(att, bw["smooth.weight"], bw["smooth.bias"], padding=1) + f
        else:
            f = erlfb_forward(bw, f, cfg.activation, cfg.attention)
    rec = conv2d(f + f0, p["recon.weight"], p["recon.bias"], padding=1)
    out = pixel_shuffle(rec, cfg.scale)
    if clamp:
        out = Tensor(np.clip(out.data, 0.0, 1.0))
    return out


def dump_features(model: Model, lr: Tensor, block_indices: Iterable[int]) -> dict[int, Tensor]:
    """Attention-output feature maps for the requested blocks (1-based)."""
    indices = sorted(set(int(i) for i in block_indices))
    for i in indices:
        if not 1 <= i <= model.config.blocks:
            raise ValueError(
                f"block index {i} out of range [1, {model.config.blocks}]"
            )
    if not indices:
        return {}
    captured: dict[int, Tensor] = {}
    forward(model, lr, _capture=captured, _capture_indices=frozenset(indices))
    return captured

"""Single-stage end-to-end training: patch sampling, Adam, checkpoints.

The trajectory is fully determined by (seed, config, dataset order): the
batch and crop randomness for step ``k`` comes from a generator seeded
with ``(seed, k)``, so resuming from a checkpoint at step ``k`` replays
the identical remaining schedule.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import io as media_io
from .losses import IdentityExtractor, LossWeights, charbonnier, perceptual_loss, sobel_loss
from .metrics import psnr, ssim
from .model import Model, forward
from .tensor import Tensor

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainingError",
    "sample_patches",
    "adam_step",
    "train",
    "evaluate",
    "EvalResult",
    "save_checkpoint",
    "load_checkpoint",
]


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    scale: int = 2
    patch_size: int = 64
    batch_size: int = 8
    steps: int = 1000
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    loss_variant: str = "full"
    loss_weights: LossWeights = field(default_factory=LossWeights)
    checkpoint_every: int = 0
    eval_every: int = 0
    cosine_decay: bool = False
    dtype: str = "float32"

    def validate(self) -> None:
        if self.scale < 1:
            raise ValueError(f"scale must be >= 1, got {self.scale}")
        if self.patch_size < self.scale or self.patch_size % self.scale:
            raise ValueError(
                f"patch_size must be a positive multiple of scale, got {self.patch_size}"
            )
        for name in ("batch_size", "learning_rate", "beta1", "beta2", "adam_eps"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")

    def numpy_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class AdamState:
    """Per-parameter first/second moments and the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, model: Model) -> "AdamState":
        return cls(
            m={n: np.zeros_like(p.data) for n, p in model.parameters.items()},
            v={n: np.zeros_like(p.data) for n, p in model.parameters.items()},
        )


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """In-place Adam update with bias correction; increments ``state.t``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in grads.items():
        p = params[name]
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.data.dtype)
    return state


def sample_patches(
    lr_img: np.ndarray,
    hr_img: np.ndarray,
    r: int,
    patch_size: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-aligned random crop pair; HR offsets are multiples of ``r``."""
    _, lh, lw = lr_img.shape
    _, hh, hw = hr_img.shape
    if lh * r != hh or lw * r != hw:
        raise ValueError(
            f"misaligned pair: lr {lh}x{lw} * {r} != hr {hh}x{hw}"
        )
    if hh < patch_size or hw < patch_size:
        raise ValueError(f"hr {hh}x{hw} smaller than patch {patch_size}")
    y = int(rng.integers(0, (hh - patch_size) // r + 1)) * r
    x = int(rng.integers(0, (hw - patch_size) // r + 1)) * r
    hr_patch = hr_img[:, y : y + patch_size, x : x + patch_size]
    lp = patch_size // r
    lr_patch = lr_img[:, y // r : y // r + lp, x // r : x // r + lp]
    return lr_patch, hr_patch


def _component_losses(
    variant: str,
    weights: LossWeights,
    extractor: Callable[[Tensor], Tensor],
) -> Callable[[Tensor, Tensor], tuple[Tensor, dict[str, float]]]:
    def composite(sr, hr, lam_c, lam_v, lam_s):
        parts: dict[str, float] = {}
        total = None
        c = charbonnier(sr, hr, weights.epsilon)
        parts["charb"] = c.item()
        if lam_c:
            total = lam_c * c
        if lam_v:
            p = perceptual_loss(sr, hr, extractor)
            parts["vgg"] = p.item()
            total = lam_v * p if total is None else total + lam_v * p
        if lam_s:
            s = sobel_loss(sr, hr)
            parts["sobel"] = s.item()
            total = lam_s * s if total is None else total + lam_s * s
        if total is None:
            total = 0.0 * c
        return total, parts

    w = weights
    if variant == "full":
        return lambda sr, hr: composite(sr, hr, w.lambda_charb, w.lambda_vgg, w.lambda_sobel)
    if variant == "no_charb":
        return lambda sr, hr: composite(sr, hr, 0.0, w.lambda_vgg, w.lambda_sobel)
    if variant == "no_vgg":
        return lambda sr, hr: composite(sr, hr, w.lambda_charb, 0.0, w.lambda_sobel)
    if variant == "no_sobel":
        return lambda sr, hr: composite(sr, hr, w.lambda_charb, w.lambda_vgg, 0.0)
    if variant == "l1":
        def l1(sr, hr):
            t = (sr - hr).abs().mean()
            return t, {"l1": t.item()}
        return l1
    if variant == "l2":
        def l2(sr, hr):
            d = sr - hr
            t = (d * d).mean()
            return t, {"l2": t.item()}
        return l2
    if variant == "lpips_placeholder":
        def lp(sr, hr):
            t = perceptual_loss(sr, hr, extractor)
            return t, {"vgg": t.item()}
        return lp
    raise ValueError(f"unknown loss variant {variant!r}")


def _check_pairs(pairs: Sequence[tuple[np.ndarray, np.ndarray]], scale: int) -> None:
    if not pairs:
        raise ValueError("training requires a non-empty dataset")
    for i, (lr, hr) in enumerate(pairs):
        if lr.ndim != 3 or hr.ndim != 3:
            raise ValueError(f"pair {i}: images must be (c, h, w)")
        if lr.shape[1] * scale != hr.shape[1] or lr.shape[2] * scale != hr.shape[2]:
            raise ValueError(
                f"pair {i}: lr {lr.shape} does not align with hr {hr.shape} at scale {scale}"
            )


def train(
    pairs: Sequence[tuple[np.ndarray, np.ndarray]],
    model: Model,
    config: TrainConfig,
    extractor: Callable[[Tensor], Tensor] | None = None,
    log_path=None,
    checkpoint_path=None,
    state: AdamState | None = None,
    start_step: int = 0,
) -> tuple[Model, list[dict]]:
    """Optimize ``model`` in place; returns it with the per-step log.

    Log entries carry the step index, total loss, per-component losses
    and elapsed wall-clock milliseconds (the one nondeterministic field).
    """
    config.validate()
    _check_pairs(pairs, config.scale)
    dtype = config.numpy_dtype()
    fn = _component_losses(config.loss_variant, config.loss_weights, extractor or IdentityExtractor())
    if state is None:
        state = AdamState.init(model)
    model.set_requires_grad(True)

    log: list[dict] = []
    log_file = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for step in range(start_step, config.steps):
            t0 = time.perf_counter()
            rng = np.random.default_rng((config.seed, step))
            idx = rng.integers(0, len(pairs), size=config.batch_size)
            lr_batch = []
            hr_batch = []
            for i in idx:
                lr_img, hr_img = pairs[int(i)]
                lp, hp = sample_patches(lr_img, hr_img, config.scale, config.patch_size, rng)
                lr_batch.append(lp)
                hr_batch.append(hp)
            lr_t = Tensor(np.stack(lr_batch).astype(dtype))
            hr_t = Tensor(np.stack(hr_batch).astype(dtype))

            sr = forward(model, lr_t)
            loss, parts = fn(sr, hr_t)
            total = loss.item()
            if not math.isfinite(total):
                raise TrainingError(f"non-finite loss at step {step}")

            model.zero_grad()
            loss.backward()
            grads = {n: p.grad for n, p in model.parameters.items() if p.grad is not None}
            lr_now = config.learning_rate
            if config.cosine_decay and config.steps > 0:
                lr_now *= 0.5 * (1.0 + math.cos(math.pi * step / config.steps))
            adam_step(model.parameters, grads, state, lr_now, config.beta1, config.beta2, config.adam_eps)

            entry = {
                "step": step,
                "loss": total,
                **{k: v for k, v in parts.items()},
                "elapsed_ms": (time.perf_counter() - t0) * 1000.0,
            }
            if config.eval_every and (step + 1) % config.eval_every == 0:
                entry["psnr"] = evaluate(model, pairs).psnr_mean
            log.append(entry)
            if log_file:
                log_file.write(json.dumps(entry) + "\n")
            if checkpoint_path and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
                save_checkpoint(checkpoint_path, model, state, step + 1)
    finally:
        if log_file:
            log_file.close()
    return model, log


# ---- checkpointing ---------------------------------------------------------------


def save_checkpoint(path, model: Model, state: AdamState, next_step: int) -> None:
    """Weights at ``path`` plus an optimizer archive at ``path + '.opt'``."""
    media_io.save_weights(model, path)
    tensors: dict[str, np.ndarray] = {}
    for name in model.parameters:
        tensors[f"m.{name}"] = state.m[name]
    for name in model.parameters:
        tensors[f"v.{name}"] = state.v[name]
    media_io.save_tensor_archive(
        Path(str(path) + ".opt"), tensors, meta={"t": state.t, "next_step": next_step}
    )


def load_checkpoint(path, dtype=np.float32) -> tuple[Model, AdamState, int]:
    model = media_io.load_weights(path, dtype=dtype, requires_grad=True)
    tensors, meta = media_io.load_tensor_archive(Path(str(path) + ".opt"), dtype=dtype)
    m = {}
    v = {}
    for name in model.parameters:
        m[name] = tensors[f"m.{name}"]
        v[name] = tensors[f"v.{name}"]
    state = AdamState(m=m, v=v, t=int(meta["t"]))
    return model, state, int(meta["next_step"])


# ---- evaluation ---------------------------------------------------------------


@dataclass
class EvalResult:
    psnr: list[float]
    ssim: list[float]
    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float


def _run_model(model_or_fn, lr_img: np.ndarray) -> np.ndarray:
    if isinstance(model_or_fn, Model):
        out = forward(model_or_fn, Tensor(lr_img[None]), clamp=True)
        return out.data[0]
    return np.asarray(model_or_fn(lr_img))


def evaluate(model_or_fn, pairs: Sequence[tuple[np.ndarray, np.ndarray]]) -> EvalResult:
    """Clamped inference plus PSNR/SSIM per pair; mean with sample std.

    Accepts a built model or any callable mapping (c, h, w) -> (c, H, W).
    """
    if not pairs:
        raise ValueError("evaluate requires at least one pair")
    psnrs: list[float] = []
    ssims: list[float] = []
    for lr_img, hr_img in pairs:
        sr = _run_model(model_or_fn, lr_img)
        psnrs.append(psnr(sr, hr_img))
        ssims.append(ssim(sr, hr_img))

    def std(xs):
        return float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0

    return EvalResult(
        psnr=psnrs,
        ssim=ssims,
        psnr_mean=float(np.mean(psnrs)),
        psnr_std=std(psnrs),
        ssim_mean=float(np.mean(ssims)),
        ssim_std=std(ssims),
    )

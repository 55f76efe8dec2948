"""Estimator-style front end so the engine composes with the scikit-learn
ecosystem: constructors only store hyperparameters, ``fit`` learns state
into trailing-underscore attributes, and ``get_params``/``set_params``
come from the scikit-learn base class.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .losses import LossWeights
from .model import DEFAULT_BLOCKS, DEFAULT_CHANNELS, Model, ModelConfig, build_model, forward
from .ranking import PairwiseStudy, RankingResult, bootstrap_ci, filter_responses, fit_bradley_terry
from .resample import bicubic_resize
from .tensor import Tensor, no_grad
from .train import TrainConfig, evaluate, train
from .validation import check_image

__all__ = ["SuperResolver", "BicubicUpscaler", "BradleyTerryRanker"]


def _as_image_list(X) -> tuple[list[np.ndarray], bool]:
    if isinstance(X, np.ndarray) and X.ndim == 3:
        return [check_image(X)], True
    return [check_image(x) for x in X], False


class SuperResolver(BaseEstimator):
    """Trainable super-resolution estimator.

    ``fit(X, y)`` takes matched lists of low- and high-resolution images
    as (3, h, w) arrays in [0, 1]; ``predict`` upscales by ``scale``.
    """

    def __init__(
        self,
        scale: int = 2,
        channels: int = DEFAULT_CHANNELS,
        blocks: int = DEFAULT_BLOCKS,
        activation: str = "tanh",
        attention: str = "eca",
        steps: int = 500,
        learning_rate: float = 5e-4,
        batch_size: int = 8,
        patch_size: int = 64,
        loss: str = "full",
        loss_weights: LossWeights | None = None,
        seed: int = 0,
        dtype: str = "float32",
    ):
        self.scale = scale
        self.channels = channels
        self.blocks = blocks
        self.activation = activation
        self.attention = attention
        self.steps = steps
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.patch_size = patch_size
        self.loss = loss
        self.loss_weights = loss_weights
        self.seed = seed
        self.dtype = dtype

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            channels=self.channels,
            blocks=self.blocks,
            scale=self.scale,
            activation=self.activation,
            attention=self.attention,
            seed=self.seed,
        )

    def fit(self, X, y):
        lr_imgs, _ = _as_image_list(X)
        hr_imgs, _ = _as_image_list(y)
        if len(lr_imgs) != len(hr_imgs):
            raise ValueError(f"got {len(lr_imgs)} LR and {len(hr_imgs)} HR images")
        # patches cannot exceed the smallest HR image
        smallest = min(min(im.shape[1], im.shape[2]) for im in hr_imgs)
        patch = min(self.patch_size, smallest)
        patch -= patch % self.scale
        config = TrainConfig(
            scale=self.scale,
            patch_size=patch,
            batch_size=self.batch_size,
            steps=self.steps,
            learning_rate=self.learning_rate,
            seed=self.seed,
            loss_variant=self.loss,
            loss_weights=self.loss_weights or LossWeights(),
            dtype=self.dtype,
        )
        np_dtype = config.numpy_dtype()
        model = build_model(self._model_config(), dtype=np_dtype)
        pairs = list(zip(lr_imgs, hr_imgs))
        self.model_, self.log_ = train(pairs, model, config)
        return self

    @classmethod
    def from_model(cls, model: Model) -> "SuperResolver":
        cfg = model.config
        est = cls(
            scale=cfg.scale,
            channels=cfg.channels,
            blocks=cfg.blocks,
            activation=cfg.activation,
            attention=cfg.attention,
            seed=cfg.seed,
        )
        est.model_ = model
        est.log_ = []
        return est

    def _check_fitted(self) -> Model:
        model = getattr(self, "model_", None)
        if model is None:
            raise NotFittedError("SuperResolver must be fitted (or built from a model) first")
        return model

    def predict(self, X):
        model = self._check_fitted()
        imgs, single = _as_image_list(X)
        outputs = []
        with no_grad():
            for img in imgs:
                out = forward(model, Tensor(img[None].astype(model.parameters["extract.weight"].dtype)), clamp=True)
                outputs.append(out.data[0])
        return outputs[0] if single else outputs

    def score(self, X, y) -> float:
        """Mean PSNR (dB) of predictions against the references."""
        model = self._check_fitted()
        lr_imgs, _ = _as_image_list(X)
        hr_imgs, _ = _as_image_list(y)
        return evaluate(model, list(zip(lr_imgs, hr_imgs))).psnr_mean


class BicubicUpscaler(BaseEstimator):
    """Stateless classical baseline; ``transform`` upscales by ``scale``."""

    def __init__(self, scale: int = 2):
        self.scale = scale

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        imgs, single = _as_image_list(X)
        out = [bicubic_resize(im, im.shape[1] * self.scale, im.shape[2] * self.scale) for im in imgs]
        return out[0] if single else out

    predict = transform


class BradleyTerryRanker(BaseEstimator):
    """Pairwise-preference ranker with optional bootstrap intervals."""

    def __init__(self, max_iter: int = 2000, tol: float = 1e-10, n_boot: int = 0, seed: int = 0):
        self.max_iter = max_iter
        self.tol = tol
        self.n_boot = n_boot
        self.seed = seed

    def fit(self, X, y=None):
        """Fit from a PairwiseStudy or an iterable of response tuples."""
        study = X if isinstance(X, PairwiseStudy) else filter_responses(X)
        if self.n_boot:
            result = bootstrap_ci(study, n_boot=self.n_boot, seed=self.seed, max_iter=self.max_iter)
        else:
            result = fit_bradley_terry(study, max_iter=self.max_iter, tol=self.tol)
        self.result_: RankingResult = result
        self.items_ = result.items
        self.scores_ = result.scores
        self.ci_low_ = result.ci_low
        self.ci_high_ = result.ci_high
        return self

"""Real-time single-image super-resolution engine.

A rank-4 autodiff tensor kernel, an efficient residual local feature
network with channel/spatial attention variants, a composite training
loss (Charbonnier + perceptual + Sobel), an Adam trainer, image-quality
metrics, dataset-curation tooling, a Bradley-Terry subjective ranker, an
FPS bench harness, binary weight/pixmap serialization and a CLI.
"""

from .tensor import Tensor, ShapeError, no_grad
from .model import Model, ModelConfig, build_model, param_count, forward, dump_features
from .losses import LossWeights, charbonnier, sobel_loss, perceptual_loss, composite_loss
from .train import TrainConfig, AdamState, train, evaluate
from .metrics import psnr, ssim, si, ti, pearson
from .resample import bicubic_resize
from .curation import categorize, make_pairs, scene_static_filter, PCA, KMeans
from .ranking import PairwiseStudy, RankingResult, fit_bradley_terry, bootstrap_ci, filter_responses
from .bench import BenchResult, measure_fps, pareto_front, report
from .estimators import SuperResolver, BicubicUpscaler, BradleyTerryRanker

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "ShapeError",
    "no_grad",
    "Model",
    "ModelConfig",
    "build_model",
    "param_count",
    "forward",
    "dump_features",
    "LossWeights",
    "charbonnier",
    "sobel_loss",
    "perceptual_loss",
    "composite_loss",
    "TrainConfig",
    "AdamState",
    "train",
    "evaluate",
    "psnr",
    "ssim",
    "si",
    "ti",
    "pearson",
    "bicubic_resize",
    "categorize",
    "make_pairs",
    "scene_static_filter",
    "PCA",
    "KMeans",
    "PairwiseStudy",
    "RankingResult",
    "fit_bradley_terry",
    "bootstrap_ci",
    "filter_responses",
    "BenchResult",
    "measure_fps",
    "pareto_front",
    "report",
    "SuperResolver",
    "BicubicUpscaler",
    "BradleyTerryRanker",
    "__version__",
]

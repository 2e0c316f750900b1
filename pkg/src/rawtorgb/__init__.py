"""rawtorgb: a numpy toolkit that learns the raw-to-RGB camera pipeline.

A two-stage attention U-Net maps Bayer mosaics to display RGB, trained
with pixel, deep-feature, and color-direction losses on possibly
misaligned pairs.  Everything runs on a small reverse-mode tensor
engine; no deep-learning framework is required.
"""

__version__ = "0.1.0"

from .data import NormStats, batch_iterator, compute_norm_stats, load_dataset
from .isp import PairedSample, SyntheticISPParams, synth_clean_image, synth_pair
from .losses import FeatureExtractor, LossConfig, random_feature_extractor
from .metrics import psnr, ssim
from .model import ModelConfig, TwoStageModel, tiny_config
from .optim import Adam
from .tensor import Tensor, no_grad, rng_from, using_dtype
from .train import (EvalReport, TrainConfig, ensemble_average, evaluate,
                    load_checkpoint, save_checkpoint, train)

__all__ = [
    "Adam", "EvalReport", "FeatureExtractor", "LossConfig", "ModelConfig",
    "NormStats", "PairedSample", "SyntheticISPParams", "Tensor", "TrainConfig",
    "TwoStageModel", "batch_iterator", "compute_norm_stats", "ensemble_average",
    "evaluate", "load_checkpoint", "load_dataset", "no_grad", "psnr",
    "random_feature_extractor", "rng_from", "save_checkpoint", "ssim",
    "synth_clean_image", "synth_pair", "tiny_config", "train", "using_dtype",
    "__version__",
]

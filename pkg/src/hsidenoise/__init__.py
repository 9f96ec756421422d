"""Hyperspectral image denoising with bidirectional selective state-space scans."""

from .errors import ConfigError, DataError, NumericError, ShapeError
from .metrics import MetricsReport, psnr, sam, ssim
from .model import DenoiserModel, ModelConfig, denoise_cube
from .noise import NOISE_CASES, NoiseSpec, corrupt, generate_synthetic_clean
from .cubeio import (RunConfig, load_checkpoint, read_cube, save_checkpoint,
                     write_cube)
from .train import TrainConfig, make_validation_pairs, train, validation_psnr

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "NumericError", "ShapeError",
    "MetricsReport", "psnr", "sam", "ssim",
    "DenoiserModel", "ModelConfig", "denoise_cube",
    "NOISE_CASES", "NoiseSpec", "corrupt", "generate_synthetic_clean",
    "RunConfig", "load_checkpoint", "read_cube", "save_checkpoint",
    "write_cube",
    "TrainConfig", "make_validation_pairs", "train", "validation_psnr",
    "__version__",
]

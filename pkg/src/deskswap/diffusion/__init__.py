"""Toy-scale latent video diffusion: codec, schedule, denoiser, training, sampling."""

from .codec import CodecConfig, PatchCodec
from .model import CanvasDenoiser, DenoiserConfig, build_denoiser, parameter_count
from .sampling import SamplerConfig, sample
from .schedule import NoiseSchedule, add_noise, inference_steps, predict_clean, reverse_step
from .training import (
    TrainerConfig,
    TrainingExample,
    TrainingLog,
    TrainingState,
    init_training,
    load_checkpoint,
    run_training,
    save_checkpoint,
    smoothed,
    train_step,
)

__all__ = [
    "CanvasDenoiser",
    "CodecConfig",
    "DenoiserConfig",
    "NoiseSchedule",
    "PatchCodec",
    "SamplerConfig",
    "TrainerConfig",
    "TrainingExample",
    "TrainingLog",
    "TrainingState",
    "add_noise",
    "build_denoiser",
    "inference_steps",
    "init_training",
    "load_checkpoint",
    "parameter_count",
    "predict_clean",
    "reverse_step",
    "run_training",
    "sample",
    "save_checkpoint",
    "smoothed",
    "train_step",
]

from .checkpoint import CheckpointError, load, save
from .layers import GRConv, ResBlock, band_recurrence
from .model import (
    GrcnnDenoiser,
    GrcnnModel,
    StaleCacheError,
    denoise,
    model_backward,
    model_forward,
)
from .train import Adam, TrainConfig, TrainingDivergedError, TrainResult, l2_loss, toy_config, train, train_toy

__all__ = [
    "Adam",
    "CheckpointError",
    "GRConv",
    "GrcnnDenoiser",
    "GrcnnModel",
    "ResBlock",
    "StaleCacheError",
    "TrainConfig",
    "TrainResult",
    "TrainingDivergedError",
    "band_recurrence",
    "denoise",
    "l2_loss",
    "load",
    "model_backward",
    "model_forward",
    "save",
    "toy_config",
    "train",
    "train_toy",
]

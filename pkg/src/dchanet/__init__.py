"""Dual-view correlation hybrid attention network on numpy, with a phantom testbed."""

from .model import ModelConfig, build_model, model_forward
from .phantom import PhantomConfig, generate_dataset
from .tensor import Tensor, backward
from .train import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ModelConfig",
    "PhantomConfig",
    "Tensor",
    "TrainConfig",
    "backward",
    "build_model",
    "evaluate",
    "generate_dataset",
    "model_forward",
    "train",
]

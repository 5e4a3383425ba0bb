"""Dual temporal/frequency pyramid forecasting with cross-attention
fusion, built on a self-contained numpy autodiff core."""

from .kernels import active_backend
from .model import Forecaster, ModelConfig, make_variant
from .numerics import Tensor, backward, no_grad
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Forecaster", "ModelConfig", "make_variant",
    "Tensor", "backward", "no_grad",
    "TrainConfig", "train", "evaluate",
    "active_backend", "__version__",
]

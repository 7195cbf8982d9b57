"""Stochastic-embedding sequential recommendation with a squared-W2
contrastive kernel: encoder, losses, trainer, evaluation, and CLI."""

from .config import RunConfig, TrainConfig
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["RunConfig", "TrainConfig", "KERNEL_BACKEND", "__version__"]

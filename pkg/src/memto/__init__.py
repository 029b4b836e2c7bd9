"""Memory-guided Transformer autoencoder for multivariate time-series anomaly detection."""

from .config import ModelConfig, RunConfig, TrainConfig
from .model import MEMTO, ForwardOutput

__all__ = ["MEMTO", "ForwardOutput", "ModelConfig", "TrainConfig", "RunConfig"]
__version__ = "0.1.0"

"""Joint super-resolution and inverse tone mapping with global-priors-guided modulation, in numpy."""
from .colorimetry import Chroma, Frame, Gamut, Transfer
from .errors import ConfigError, DataError, GpgmError, NumericalError, ShapeError
from .model import ModelConfig, ModelParams, forward_backward, gpgmnet_forward, init_params, param_count, zero_params
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Chroma", "Frame", "Gamut", "Transfer",
    "ConfigError", "DataError", "GpgmError", "NumericalError", "ShapeError",
    "ModelConfig", "ModelParams", "forward_backward", "gpgmnet_forward", "init_params", "param_count",
    "zero_params", "TrainConfig", "train",
]

"""Region-focused semantic segmentation with hard Top-K spatial selection.

Built on a small float64 reverse-mode autodiff engine (``focusseg.tensor``)
so every kernel can be checked against finite differences.
"""

from .config import DataConfig, RunConfig, TrainConfig, load_config, save_config, tiny_config
from .errors import ConfigurationError, ContractViolation, TrainingDiverged, UnsupportedConfiguration
from .model import Model, ModelConfig, build_model, count_flops, count_params, forward
from .region import DEFAULT_BRANCHES, BranchConfig
from .tensor import Tensor, backward, no_grad

__all__ = [
    "DataConfig", "RunConfig", "TrainConfig", "load_config", "save_config", "tiny_config",
    "ConfigurationError", "ContractViolation", "TrainingDiverged", "UnsupportedConfiguration",
    "Model", "ModelConfig", "build_model", "count_flops", "count_params", "forward",
    "DEFAULT_BRANCHES", "BranchConfig", "Tensor", "backward", "no_grad",
]

__version__ = "0.1.0"

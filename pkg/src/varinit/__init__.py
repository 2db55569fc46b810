"""Dropout- and nonlinearity-corrected weight initialization, Batch Normalization
variance re-estimation, and a small numpy network stack to test them on."""

from .activations import ActivationKind, AdjustmentFactors, adjustment_factors
from .core import ContractError, DataError, RandomSource, ShapeError
from .initializers import InitializerSpec, build_conv_filters, build_dense_weights, corrective_scale
from .layers import Mode, Network
from .reestimate import ReEstimateConfig, evaluate, reestimate

__version__ = "0.1.0"

__all__ = [
    "ActivationKind", "AdjustmentFactors", "adjustment_factors",
    "ContractError", "DataError", "RandomSource", "ShapeError",
    "InitializerSpec", "build_conv_filters", "build_dense_weights", "corrective_scale",
    "Mode", "Network", "ReEstimateConfig", "evaluate", "reestimate",
]

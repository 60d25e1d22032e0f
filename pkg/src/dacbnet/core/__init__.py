from .gradcheck import GradCheckConfig, GradCheckReport, check_scalar, grad_check
from .layers import (
    Conv2d,
    Flatten,
    GlobalAvgPool,
    Identity,
    Layer,
    LayerNorm,
    Linear,
    Pool2d,
    ReLU,
    Residual,
    Sequential,
    Sigmoid,
    Tap,
    kaiming_uniform,
)
from .ops import DimensionError, as_tensor
from .rng import derive_seed, make_rng, restore_rng, rng_state, substream

__all__ = [
    "Conv2d", "DimensionError", "Flatten", "GlobalAvgPool", "GradCheckConfig", "GradCheckReport",
    "Identity", "Layer", "LayerNorm", "Linear", "Pool2d", "ReLU", "Residual", "Sequential",
    "Sigmoid", "Tap", "as_tensor", "check_scalar", "derive_seed", "grad_check", "kaiming_uniform",
    "make_rng", "restore_rng", "rng_state", "substream",
]

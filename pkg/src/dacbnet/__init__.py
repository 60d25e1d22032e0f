"""Dual attention-guided compact bilinear networks on numpy.

The numerical core (layers with explicit backward rules, bilinear and compact
bilinear pooling, channel/spatial/efficient attention, complement cross
entropy) plus the data, training, metrics and Grad-CAM tooling around it.
"""

from .attention import ECA, AttentionConfig, ChannelAttention, DualAttention, SpatialAttention
from .backbone import BackboneSpec, DACBNet, FreezePolicy, ModelConfig, SketchConfig, apply_freeze, build_dacb
from .bilinear import (
    BilinearPooling,
    CompactBilinearPooling,
    SketchProjection,
    bilinear_pool,
    cbp_layer,
    compact_project,
    l2_normalize,
    signed_sqrt,
)
from .explain import HeatMap, grad_cam, render_overlay
from .losses import LossConfig, cce_total, complement_entropy, cross_entropy, focal_loss
from .metrics import confusion, evaluate_predictions, prf1, roc_auc
from .train import TrainConfig, TrainData, load_checkpoint, save_checkpoint, train_loop

__version__ = "0.1.0"

__all__ = [
    "AttentionConfig", "BackboneSpec", "BilinearPooling", "ChannelAttention", "CompactBilinearPooling",
    "DACBNet", "DualAttention", "ECA", "FreezePolicy", "HeatMap", "LossConfig", "ModelConfig",
    "SketchConfig", "SketchProjection", "SpatialAttention", "TrainConfig", "TrainData", "apply_freeze",
    "bilinear_pool", "build_dacb", "cbp_layer", "cce_total", "compact_project", "complement_entropy",
    "confusion", "cross_entropy", "evaluate_predictions", "focal_loss", "grad_cam", "l2_normalize",
    "load_checkpoint", "prf1", "render_overlay", "roc_auc", "save_checkpoint", "signed_sqrt", "train_loop",
]

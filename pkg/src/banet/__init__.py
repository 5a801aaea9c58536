"""Boundary-aware context segmentation network on a from-scratch
autodiff tensor core."""

from .backbone import BackboneConfig, StageBundle
from .heads import AblationFlags, HeadOutputs, ModelConfig, PeeConfig, banet_forward, init_params
from .losses import LossBreakdown, total_loss
from .metrics import MetricReport, confusion, metrics
from .params import ParameterStore
from .tensor import Tensor

__all__ = [
    "AblationFlags", "BackboneConfig", "HeadOutputs", "LossBreakdown",
    "MetricReport", "ModelConfig", "ParameterStore", "PeeConfig",
    "StageBundle", "Tensor", "banet_forward", "confusion", "init_params",
    "metrics", "total_loss",
]

"""Minimal NCHW tensor library with reverse-mode differentiation."""
from .graph import INPUT, LayerKind, LayerSpec, ModelGraph, Node
from .gradcheck import GradCheckReport, grad_check, grad_check_model
from .ops import (avg_pool2x2, batchnorm, center_crop, concat, conv2d, deconv2x2, dropout, l1_loss,
                  max_pool2x2, relu, upsample_nearest, weighted_sum)
from .tensor import Tensor, constant, corrupted_backward, parameter, record_kinks

__all__ = [
    "INPUT", "LayerKind", "LayerSpec", "ModelGraph", "Node", "GradCheckReport", "grad_check",
    "grad_check_model", "avg_pool2x2", "batchnorm", "center_crop", "concat", "conv2d", "deconv2x2",
    "dropout", "l1_loss", "max_pool2x2", "relu", "upsample_nearest", "weighted_sum", "Tensor",
    "constant", "corrupted_backward", "parameter", "record_kinks",
]

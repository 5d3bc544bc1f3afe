"""Small numpy neural-network engine used by the CDAE-DNN estimator."""

from .checkpoint import load_model, model_from_bytes, model_to_bytes, save_model
from .layers import (
    BatchNorm,
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    Layer,
    ReLU,
    Sigmoid,
    TransposedConv2d,
    layer_from_spec,
    sigmoid,
)
from .losses import bce_loss, mse_loss
from .model import GradCheckReport, Sequential, grad_check, sgd_step

__all__ = [
    "BatchNorm", "Conv2d", "Dense", "Dropout", "Flatten", "GradCheckReport", "Layer", "ReLU",
    "Sequential", "Sigmoid", "TransposedConv2d", "bce_loss", "grad_check", "layer_from_spec",
    "load_model", "model_from_bytes", "model_to_bytes", "mse_loss", "save_model", "sgd_step",
    "sigmoid",
]

"""Minimal reverse-mode autodiff over numpy arrays."""
from .gradcheck import GradCheckResult, grad_check, grad_check_detail, rel_err
from .ops import (
    activation,
    bce_with_logits,
    center_crop,
    concat_channels,
    conv2d,
    conv_transpose2d,
    maxpool2,
    relu,
    sigmoid,
    slice_channels,
)
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, add, mul, tsum

__all__ = [
    "Adam", "AdamState", "GradCheckResult", "Tensor", "activation", "adam_step", "add",
    "bce_with_logits", "center_crop", "concat_channels", "conv2d", "conv_transpose2d",
    "grad_check", "grad_check_detail", "maxpool2", "mul", "rel_err", "relu", "sigmoid",
    "slice_channels", "tsum",
]

"""Differentiable tensor engine: autodiff, layer primitives, gradient checking."""

from .convlstm import ConvLSTMParams, LSTMDirection, conv_lstm_bidirectional
from .gradcheck import GradCheckReport, grad_check, grad_check_report
from .ops import (
    BatchNormState,
    ConvKernel,
    add,
    batch_norm,
    concat_channels,
    conv1d_same,
    depthwise_conv2d,
    leaky_relu,
    pointwise_conv2d,
    separable_atrous_conv2d,
    slice_channels,
    softmax_channels,
    spatial_dropout,
)
from .tensor import GradTape, Tensor, as_tensor, backward, concat, no_grad, stack

__all__ = [
    "BatchNormState", "ConvKernel", "ConvLSTMParams", "GradCheckReport", "GradTape", "LSTMDirection",
    "Tensor", "add", "as_tensor", "backward", "batch_norm", "concat", "concat_channels", "conv1d_same",
    "conv_lstm_bidirectional", "depthwise_conv2d", "grad_check", "grad_check_report", "leaky_relu",
    "no_grad", "pointwise_conv2d", "separable_atrous_conv2d", "slice_channels", "softmax_channels",
    "spatial_dropout", "stack",
]

"""Minimal differentiable core used by the DDGNN model."""

from .adam import AdamState, adam_step
from .gradcheck import grad_check, numerical_gradient, relative_error
from .layers import (
    dropout_backward,
    dropout_forward,
    global_mean_pool,
    graphconv_backward,
    graphconv_forward,
    linear_backward,
    linear_forward,
    segment_pool_matrix,
    sigmoid,
    softmax,
    softmax_cross_entropy,
)
from .lstm import bilstm_backward, bilstm_forward, lstm_backward, lstm_forward, lstm_param_shapes

__all__ = [
    "AdamState", "adam_step", "grad_check", "numerical_gradient", "relative_error",
    "dropout_backward", "dropout_forward", "global_mean_pool", "graphconv_backward",
    "graphconv_forward", "linear_backward", "linear_forward", "segment_pool_matrix",
    "sigmoid", "softmax", "softmax_cross_entropy", "bilstm_backward", "bilstm_forward",
    "lstm_backward", "lstm_forward", "lstm_param_shapes",
]

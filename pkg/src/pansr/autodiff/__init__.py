"""Minimal reverse-mode automatic differentiation over numpy arrays."""

from .tensor import (
    Node,
    Tensor,
    as_tensor,
    backward,
    enable_grad,
    get_default_dtype,
    grad,
    is_grad_enabled,
    no_grad,
    precision,
    set_default_dtype,
)
from . import ops
from .ops import (
    avg_pool_2x_down,
    concat_channels,
    conv2d,
    conv2d_downscale,
    conv2d_upscale,
    conv2d_weight,
    conv_transpose2d,
    elementwise,
    leaky_relu,
    log,
    nearest_2x_up,
    resize,
    sigmoid,
    softplus,
)
from .gradcheck import gradcheck, numerical_grad

__all__ = [
    "Node", "Tensor", "as_tensor", "backward", "enable_grad", "get_default_dtype",
    "grad", "is_grad_enabled", "no_grad", "precision", "set_default_dtype", "ops",
    "avg_pool_2x_down", "concat_channels", "conv2d", "conv2d_downscale",
    "conv2d_upscale", "conv2d_weight", "conv_transpose2d", "elementwise",
    "leaky_relu", "log", "nearest_2x_up", "resize", "sigmoid", "softplus",
    "gradcheck", "numerical_grad",
]

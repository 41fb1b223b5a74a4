"""Dense arrays, reverse-mode differentiation and gradient checking."""

from .autodiff import Gradients, Node, Tape, Tensor, apply, as_tensor, backward, no_grad, value_and_grad
from .gradcheck import GradCheckResult, grad_check
from .ops import (
    bilinear_upsample,
    conv2d,
    global_avg_pool,
    layer_norm,
    masked_softmax,
    matmul,
)
from .params import Initializer, ParamStore

__all__ = [
    "Gradients", "Node", "Tape", "Tensor", "apply", "as_tensor", "backward", "no_grad",
    "value_and_grad", "GradCheckResult", "grad_check", "bilinear_upsample", "conv2d",
    "global_avg_pool", "layer_norm", "masked_softmax", "matmul", "Initializer", "ParamStore",
]

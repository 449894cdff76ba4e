from .core import (
    NonFiniteError, OpCounter, Parameter, Tensor, abs_, add, as_tensor, backward, concat, count_ops,
    default_dtype, dtype_scope, exp, gelu, is_grad_enabled, layer_norm, log, matmul, mean, mul, no_grad, reciprocal,
    reshape, scale, set_default_dtype, sigmoid, slice_, softmax_lastdim, sqrt, square, sub,
    sum_, take_rows, tanh, transpose, unfold2d,
)
from .optim import AdamState, adam_step, zero_grads

__all__ = [
    "NonFiniteError", "OpCounter", "Parameter", "Tensor", "abs_", "add", "as_tensor", "backward", "concat", "count_ops",
    "default_dtype", "dtype_scope", "exp", "gelu", "is_grad_enabled", "layer_norm", "log", "matmul", "mean",
    "mul", "no_grad", "reciprocal", "reshape", "scale", "set_default_dtype", "sigmoid", "slice_",
    "softmax_lastdim", "sqrt", "square", "sub", "sum_", "take_rows", "tanh", "transpose",
    "unfold2d", "AdamState", "adam_step", "zero_grads",
]

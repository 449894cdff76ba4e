"""Differentiable ops paired with input factories, shared by the gradient checks."""
import numpy as np

from depthfield.tensor import (abs_, add, concat, exp, gelu, layer_norm, log, matmul, mean, mul,
                               reciprocal, reshape, scale, sigmoid, slice_, softmax_lastdim, sqrt,
                               square, sub, sum_, take_rows, tanh, transpose, unfold2d)


def _positive(rng, shape):
    return rng.uniform(0.5, 2.0, size=shape)


# op name -> (input factory, forward)
UNARY = {
    "exp": (lambda r: r.normal(size=(3, 4)), exp),
    "log": (lambda r: _positive(r, (3, 4)), log),
    "square": (lambda r: r.normal(size=(3, 4)), square),
    "sqrt": (lambda r: _positive(r, (3, 4)), sqrt),
    "reciprocal": (lambda r: _positive(r, (3, 4)), reciprocal),
    "abs": (lambda r: r.normal(size=(3, 4)) + np.sign(r.normal(size=(3, 4))) * 0.1, abs_),
    "sigmoid": (lambda r: r.normal(size=(3, 4)) * 3, sigmoid),
    "tanh": (lambda r: r.normal(size=(3, 4)), tanh),
    "gelu": (lambda r: r.normal(size=(3, 4)) * 2, gelu),
    "scale": (lambda r: r.normal(size=(3, 4)), lambda x: scale(x, -1.7)),
    "sum_axis": (lambda r: r.normal(size=(2, 3, 4)), lambda x: sum_(x, axis=1)),
    "mean": (lambda r: r.normal(size=(2, 3, 4)), lambda x: mean(x, axis=-1, keepdims=True)),
    "softmax": (lambda r: r.normal(size=(2, 5)), softmax_lastdim),
    "layer_norm": (lambda r: r.normal(size=(4, 6)), layer_norm),
    "reshape": (lambda r: r.normal(size=(2, 6)), lambda x: reshape(x, (3, 4))),
    "transpose": (lambda r: r.normal(size=(2, 3, 4)), lambda x: transpose(x, (2, 0, 1))),
    "slice": (lambda r: r.normal(size=(5, 4)), lambda x: slice_(x, (slice(1, 4), slice(None, 2)))),
    "take_rows": (lambda r: r.normal(size=(5, 3)), lambda x: take_rows(x, [4, 0, 4, 2])),
    "unfold2d": (lambda r: r.normal(size=(1, 2, 5, 6)), lambda x: unfold2d(x, 3, 2, 1)),
}

BINARY = {
    "add": ((3, 4), (3, 4), add),
    "add_leading_broadcast": ((2, 3, 4), (4,), add),
    "sub": ((3, 4), (3, 4), sub),
    "mul": ((3, 4), (3, 4), mul),
    "mul_leading_broadcast": ((2, 3, 4), (3, 4), mul),
    "matmul": ((3, 4), (4, 2), matmul),
    "matmul_batched": ((2, 3, 4), (4, 5), matmul),
    "matmul_batch_both": ((2, 1, 3, 4), (1, 3, 4, 2), matmul),
    "concat": ((3, 2), (3, 4), lambda a, b: concat([a, b], axis=-1)),
}

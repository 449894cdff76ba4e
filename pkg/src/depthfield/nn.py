"""Small functional layers over a flat ``name -> Parameter`` dict."""
from __future__ import annotations

import math

import numpy as np

from .tensor import (Parameter, Tensor, gelu, layer_norm, matmul, reshape, softmax_lastdim,
                     transpose, unfold2d)

Params = dict[str, Parameter]


def init_linear(params: Params, name: str, fan_in: int, fan_out: int, rng: np.random.Generator,
                bias: bool = True) -> None:
    bound = 1.0 / math.sqrt(fan_in)
    params[f"{name}.w"] = Parameter(rng.uniform(-bound, bound, (fan_in, fan_out)), f"{name}.w")
    if bias:
        params[f"{name}.b"] = Parameter(rng.uniform(-bound, bound, (fan_out,)), f"{name}.b")


def linear(x: Tensor, params: Params, name: str) -> Tensor:
    y = matmul(x, params[f"{name}.w"])
    b = params.get(f"{name}.b")
    return y if b is None else y + b


def init_norm(params: Params, name: str, width: int) -> None:
    params[f"{name}.g"] = Parameter(np.ones(width), f"{name}.g")
    params[f"{name}.b"] = Parameter(np.zeros(width), f"{name}.b")


def norm(x: Tensor, params: Params, name: str) -> Tensor:
    return layer_norm(x, params[f"{name}.g"], params[f"{name}.b"])


def init_mlp(params: Params, name: str, width: int, hidden: int, rng) -> None:
    init_norm(params, f"{name}.norm", width)
    init_linear(params, f"{name}.fc1", width, hidden, rng)
    init_linear(params, f"{name}.fc2", hidden, width, rng)


def mlp_residual(x: Tensor, params: Params, name: str) -> Tensor:
    h = gelu(linear(norm(x, params, f"{name}.norm"), params, f"{name}.fc1"))
    return x + linear(h, params, f"{name}.fc2")


def init_attention(params: Params, name: str, q_dim: int, kv_dim: int | None, heads: int,
                   head_dim: int, out_dim: int, rng) -> None:
    """``kv_dim=None`` builds self-attention (one shared input norm)."""
    inner = heads * head_dim
    init_norm(params, f"{name}.qnorm", q_dim)
    if kv_dim is None:
        kv_dim = q_dim
    else:
        init_norm(params, f"{name}.kvnorm", kv_dim)
    init_linear(params, f"{name}.q", q_dim, inner, rng, bias=False)
    init_linear(params, f"{name}.k", kv_dim, inner, rng, bias=False)
    init_linear(params, f"{name}.v", kv_dim, inner, rng, bias=False)
    init_linear(params, f"{name}.o", inner, out_dim, rng)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    n, width = x.shape
    return transpose(reshape(x, (n, heads, width // heads)), (1, 0, 2))


def attention(q_in: Tensor, kv_in: Tensor, params: Params, name: str, heads: int) -> Tensor:
    """Pre-norm multi-head attention of ``q_in`` [Nq, Cq] over ``kv_in`` [Nk, Ck]."""
    qn = norm(q_in, params, f"{name}.qnorm")
    kvn = qn if kv_in is q_in else norm(kv_in, params, f"{name}.kvnorm")
    q = _split_heads(linear(qn, params, f"{name}.q"), heads)
    k = _split_heads(linear(kvn, params, f"{name}.k"), heads)
    v = _split_heads(linear(kvn, params, f"{name}.v"), heads)
    head_dim = q.shape[-1]
    scores = matmul(q, transpose(k, (0, 2, 1))) * (1.0 / math.sqrt(head_dim))
    out = matmul(softmax_lastdim(scores), v)
    nq = q_in.shape[0]
    out = reshape(transpose(out, (1, 0, 2)), (nq, heads * head_dim))
    return linear(out, params, f"{name}.o")


def init_conv(params: Params, name: str, c_in: int, c_out: int, kernel: int, rng) -> None:
    fan_in = c_in * kernel * kernel
    bound = 1.0 / math.sqrt(fan_in)
    params[f"{name}.w"] = Parameter(rng.uniform(-bound, bound, (fan_in, c_out)), f"{name}.w")
    params[f"{name}.b"] = Parameter(rng.uniform(-bound, bound, (c_out,)), f"{name}.b")


def conv2d(x: Tensor, params: Params, name: str, kernel: int = 3, stride: int = 1,
           pad: int = 1) -> Tensor:
    """[B, C, H, W] -> [B, O, Ho, Wo]."""
    B, _, H, W = x.shape
    cols = transpose(unfold2d(x, kernel, stride, pad), (0, 2, 1))
    y = linear(cols, params, name)
    Ho = (H + 2 * pad - kernel) // stride + 1
    Wo = (W + 2 * pad - kernel) // stride + 1
    return reshape(transpose(y, (0, 2, 1)), (B, y.shape[2], Ho, Wo))


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """[n_out, n_in] half-pixel-aligned linear interpolation weights; rows sum to 1."""
    M = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = (i + 0.5) * scale - 0.5
        src = min(max(src, 0.0), n_in - 1)
        lo = int(math.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        M[i, lo] += 1.0 - frac
        M[i, hi] += frac
    return M


def upsample_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """[B, C, h, w] -> [B, C, out_h, out_w]."""
    Mh = Tensor(bilinear_matrix(x.shape[2], out_h))
    MwT = Tensor(bilinear_matrix(x.shape[3], out_w).T)
    return matmul(matmul(Mh, x), MwT)


"""Fixed-latent attention encoder with query-based depth and RGB decoders."""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import (EmbeddingConfig, ImageEncoderConfig, assemble_encoder_tokens,
                         init_image_encoder)
from .geometry import PosedFrame
from .nn import (Params, attention, init_attention, init_linear, init_mlp, init_norm, linear,
                 mlp_residual, norm)
from .tensor import Parameter, Tensor, as_tensor, reciprocal, sigmoid

CHECKPOINT_MAGIC = b"DFCK"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_latents: int = 128
    latent_dim: int = 128
    blocks: int = 4
    heads: int = 4
    head_dim: int = 32
    mlp_ratio: int = 2
    d_min: float = 0.1
    d_max: float = 10.0
    inverse_depth: bool = False
    image: ImageEncoderConfig = field(default_factory=ImageEncoderConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)

    def __post_init__(self):
        if not 0 < self.d_min < self.d_max:
            raise ValueError(f"need 0 < d_min < d_max, got {self.d_min}, {self.d_max}")
        if self.heads < 1 or self.head_dim < 1:
            raise ValueError("heads and head_dim must be positive")

    @property
    def token_dim(self) -> int:
        return self.image.width + self.embedding.width

    @property
    def query_dim(self) -> int:
        return self.embedding.width


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> Params:
    params: Params = {}
    C = cfg.latent_dim
    hidden = cfg.mlp_ratio * C
    # truncated-normal-like latent init keeps slots distinct
    params["latent"] = Parameter(np.clip(rng.normal(0.0, 0.5, (cfg.n_latents, C)), -1.0, 1.0),
                                 "latent")
    init_image_encoder(params, cfg.image, rng)
    init_attention(params, "enc.xattn", C, cfg.token_dim, cfg.heads, cfg.head_dim, C, rng)
    init_mlp(params, "enc.xmlp", C, hidden, rng)
    for b in range(cfg.blocks):
        init_attention(params, f"enc.self{b}.attn", C, None, cfg.heads, cfg.head_dim, C, rng)
        init_mlp(params, f"enc.self{b}.mlp", C, hidden, rng)
    for head, c_out in (("depth", 1), ("rgb", 3)):
        init_linear(params, f"dec.{head}.qproj", cfg.query_dim, C, rng)
        init_attention(params, f"dec.{head}.xattn", cfg.query_dim, C, cfg.heads, cfg.head_dim, C, rng)
        init_mlp(params, f"dec.{head}.mlp", C, hidden, rng)
        init_norm(params, f"dec.{head}.outnorm", C)
        init_linear(params, f"dec.{head}.out", C, c_out, rng)
    return params


class DepthFieldModel:
    """Encode any number of posed frames into a fixed latent; decode at arbitrary cameras."""

    def __init__(self, cfg: ModelConfig, params: Params | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, np.random.default_rng(seed))

    def tokens(self, frames: list[PosedFrame]) -> Tensor:
        return assemble_encoder_tokens(frames, self.params, self.cfg.embedding)

    def encode(self, tokens) -> Tensor:
        """[N_e, C_e] tokens -> conditioned latent [N_l, C_l]."""
        tokens = as_tensor(tokens)
        if tokens.ndim != 2 or tokens.shape[0] < 1:
            raise ValueError(f"tokens must be [N_e>=1, C_e], got {tokens.shape}")
        if tokens.shape[1] != self.cfg.token_dim:
            raise ValueError(f"token width {tokens.shape[1]} != configured {self.cfg.token_dim}")
        p, heads = self.params, self.cfg.heads
        x = p["latent"]
        x = x + attention(x, tokens, p, "enc.xattn", heads)
        x = mlp_residual(x, p, "enc.xmlp")
        for b in range(self.cfg.blocks):
            x = x + attention(x, x, p, f"enc.self{b}.attn", heads)
            x = mlp_residual(x, p, f"enc.self{b}.mlp")
        return x

    def encode_frames(self, frames: list[PosedFrame]) -> Tensor:
        return self.encode(self.tokens(frames))

    def _decode(self, latent: Tensor, queries, head: str) -> Tensor:
        q = as_tensor(queries)
        if q.ndim != 2 or q.shape[1] != self.cfg.query_dim:
            raise ValueError(f"queries must be [N_d, {self.cfg.query_dim}], got {q.shape}")
        p, name = self.params, f"dec.{head}"
        h = linear(q, p, f"{name}.qproj") + attention(q, latent, p, f"{name}.xattn", self.cfg.heads)
        h = mlp_residual(h, p, f"{name}.mlp")
        return linear(norm(h, p, f"{name}.outnorm"), p, f"{name}.out")

    def depth_from_logits(self, x: Tensor) -> Tensor:
        cfg = self.cfg
        s = sigmoid(x)
        if cfg.inverse_depth:
            lo, hi = 1.0 / cfg.d_max, 1.0 / cfg.d_min
            return reciprocal(s * (hi - lo) + lo)
        return s * (cfg.d_max - cfg.d_min) + cfg.d_min

    def decode_depth(self, latent: Tensor, queries) -> Tensor:
        """[N_d, 1] depths in (d_min, d_max)."""
        return self.depth_from_logits(self._decode(latent, queries, "depth"))

    def decode_rgb(self, latent: Tensor, queries) -> Tensor:
        """[N_d, 3] colors in (0, 1)."""
        return sigmoid(self._decode(latent, queries, "rgb"))

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())


# -- checkpoint file ---------------------------------------------------------
#
# little-endian layout:
#   4s   magic "DFCK"
#   u32  version
#   32s  sha256 digest of the config JSON bytes
#   u32  config JSON length, then that many UTF-8 bytes
#   u32  array count, then per array:
#        u16 name length, name UTF-8, u8 ndim, ndim x u32 extents, f64 data (C order)

def config_digest(config_json: str) -> bytes:
    return hashlib.sha256(config_json.encode("utf-8")).digest()


def save_checkpoint(path, params: Params, config_json: str) -> None:
    path = Path(path)
    cfg_bytes = config_json.encode("utf-8")
    chunks = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), config_digest(config_json),
              struct.pack("<I", len(cfg_bytes)), cfg_bytes, struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name].data, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    path.write_bytes(b"".join(chunks))


def load_checkpoint(path) -> tuple[Params, str]:
    path = Path(path)
    buf = path.read_bytes()
    pos = 0

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise CheckpointError(f"{path}: truncated checkpoint")
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    digest = take(32)
    (n_cfg,) = struct.unpack("<I", take(4))
    config_json = take(n_cfg).decode("utf-8")
    if config_digest(config_json) != digest:
        raise CheckpointError(f"{path}: config digest mismatch")
    (count,) = struct.unpack("<I", take(4))
    params: Params = {}
    for _ in range(count):
        (n_name,) = struct.unpack("<H", take(2))
        name = take(n_name).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        n = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)
        params[name] = Parameter(arr, name)
    if pos != len(buf):
        raise CheckpointError(f"{path}: trailing bytes")
    return params, config_json

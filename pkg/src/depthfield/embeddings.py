"""Encoder tokens (image features + camera embedding) and decoder queries."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Camera, PosedFrame, compute_rays, pixel_grid
from .nn import Params, conv2d, init_conv, upsample_bilinear
from .tensor import Tensor, concat, gelu, reshape, transpose

STRIDE = 4


@dataclass(frozen=True)
class EmbeddingConfig:
    K_o: int = 8
    K_r: int = 8
    mu_o: float = 64.0
    mu_r: float = 2.0
    global_rays: bool = True
    normalize_rays: bool = False

    @property
    def width(self) -> int:
        return 6 * (self.K_o + self.K_r + 2)


@dataclass(frozen=True)
class ImageEncoderConfig:
    """Channels of the 1/4 and 1/8 feature maps; the 1/2 stage reuses the first."""

    channels: tuple[int, int] = (32, 32)

    @property
    def width(self) -> int:
        return sum(self.channels)


def fourier_frequencies(K: int, mu: float) -> np.ndarray:
    if K < 0 or mu < 2:
        raise ValueError(f"need K >= 0 and mu >= 2, got K={K}, mu={mu}")
    if K == 0:
        return np.zeros(0)
    if K == 1:
        return np.ones(1)
    return np.linspace(1.0, mu / 2.0, K)


def fourier_encode(x, K: int, mu: float) -> np.ndarray:
    """Map every scalar to [x, sin(f1 pi x), cos(f1 pi x), ..., sin(fK pi x), cos(fK pi x)].

    The last axis of ``x`` is expanded component by component, so a [..., D]
    input yields [..., D * (2K + 1)].
    """
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    if scalar:
        x = x[None]
    f = fourier_frequencies(K, mu)
    arg = np.pi * x[..., None] * f
    enc = np.empty(x.shape + (2 * K + 1,))
    enc[..., 0] = x
    enc[..., 1::2] = np.sin(arg)
    enc[..., 2::2] = np.cos(arg)
    out = enc.reshape(x.shape[:-1] + (x.shape[-1] * (2 * K + 1),))
    return out


def camera_embedding(cam: Camera, uv: np.ndarray, cfg: EmbeddingConfig) -> np.ndarray:
    """[N, 6(K_o + K_r + 2)] embedding of pixels ``uv`` [N, 2] of ``cam``.

    Columns: Fourier-encoded origin, Fourier-encoded ray, then six geometric
    columns (unit viewing direction of the pixel and the camera's optical
    axis, both in the canonical frame) that bring the width to
    ``6(K_o + K_r + 2)``.
    """
    origins, dirs = compute_rays(cam, uv, cfg.global_rays, cfg.normalize_rays)
    _, view = compute_rays(cam, uv, global_rays=False, normalize=True)
    axis = np.broadcast_to(cam.R[2], view.shape)
    return np.concatenate([fourier_encode(origins, cfg.K_o, cfg.mu_o),
                           fourier_encode(dirs, cfg.K_r, cfg.mu_r), view, axis], axis=1)


def camera_embedding_grid(cam: Camera, height: int, width: int, cfg: EmbeddingConfig) -> np.ndarray:
    """Row-major per-pixel embedding; ``cam`` intrinsics must match ``height x width``."""
    return camera_embedding(cam, pixel_grid(height, width), cfg)


def encoder_resolution(height: int, width: int) -> tuple[int, int]:
    return -(-height // STRIDE), -(-width // STRIDE)


def init_image_encoder(params: Params, cfg: ImageEncoderConfig, rng, prefix: str = "img") -> None:
    c4, c8 = cfg.channels
    init_conv(params, f"{prefix}.conv1", 3, c4, 3, rng)
    init_conv(params, f"{prefix}.conv2", c4, c4, 3, rng)
    init_conv(params, f"{prefix}.conv3", c4, c8, 3, rng)


def image_encoder(rgb: Tensor, params: Params, prefix: str = "img") -> Tensor:
    """[B, 3, H, W] -> [B, H/4 * W/4, C_img] tokens (row-major pixels)."""
    B, _, H, W = rgb.shape
    if H % 8 or W % 8:
        raise ValueError(f"image extents must be divisible by 8, got {H}x{W}")
    f2 = gelu(conv2d(rgb, params, f"{prefix}.conv1", stride=2))
    f4 = gelu(conv2d(f2, params, f"{prefix}.conv2", stride=2))
    f8 = gelu(conv2d(f4, params, f"{prefix}.conv3", stride=2))
    up = upsample_bilinear(f8, H // 4, W // 4)
    feats = concat([f4, up], axis=1)
    C = feats.shape[1]
    return transpose(reshape(feats, (B, C, (H // 4) * (W // 4))), (0, 2, 1))


def frame_images(frames: list[PosedFrame]) -> np.ndarray:
    shapes = {f.rgb.shape for f in frames}
    if len(shapes) != 1:
        raise ValueError(f"mixed resolutions in one batch: {sorted(shapes)}")
    return np.stack([f.rgb.transpose(2, 0, 1) for f in frames])


def encoder_camera_embeddings(frames: list[PosedFrame], cfg: EmbeddingConfig) -> np.ndarray:
    """[F * H/4 * W/4, C_cam], frame-major then row-major."""
    blocks = []
    for f in frames:
        h, w = f.hw
        hq, wq = encoder_resolution(h, w)
        blocks.append(camera_embedding_grid(f.camera.scaled(1.0 / STRIDE), hq, wq, cfg))
    return np.concatenate(blocks, axis=0)


def assemble_encoder_tokens(frames: list[PosedFrame], params: Params, cfg: EmbeddingConfig,
                            prefix: str = "img") -> Tensor:
    """[N_e, C_img + C_cam] tokens for all frames, frame-major then row-major."""
    if not frames:
        raise ValueError("need at least one frame to encode")
    images = Tensor(frame_images(frames))
    feats = image_encoder(images, params, prefix)
    B, L, C = feats.shape
    feats = reshape(feats, (B * L, C))
    cam = Tensor(encoder_camera_embeddings(frames, cfg))
    return concat([feats, cam], axis=1)


def assemble_decoder_queries(cam: Camera, height: int, width: int, cfg: EmbeddingConfig,
                             subset=None) -> np.ndarray:
    """Camera-only queries for a ``height x width`` view, optionally restricted to ``subset``.

    ``subset`` holds flat row-major pixel indices.
    """
    uv = pixel_grid(height, width)
    if subset is not None:
        subset = np.asarray(subset, dtype=np.int64).reshape(-1)
        if subset.size and (subset.min() < 0 or subset.max() >= uv.shape[0]):
            raise IndexError(f"query index out of range for {height}x{width}")
        uv = uv[subset]
    return camera_embedding(cam, uv, cfg)

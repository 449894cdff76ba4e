"""Geometric 3D augmentations and sparse virtual-view ground truth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (WORLD_UP, Camera, PosedFrame, euler_to_rotation, frame_pointcloud,
                       invert_pose, lookat_pose, make_pose, merge_pointclouds, project)


@dataclass(frozen=True)
class AugmentConfig:
    sigma_v: float = 0.25
    sigma_c: float = 0.25
    sigma_t: float = 1.0
    sigma_r: float = 0.1
    virtual: bool = True
    jitter: bool = True
    randomize: bool = True
    virtual_count: int = 1
    splat_radius: int = 0

    def __post_init__(self):
        for name in ("sigma_v", "sigma_c", "sigma_t", "sigma_r"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class VirtualFrame:
    """Sparse RGB-D observed from a virtual camera.

    ``pixels`` are flat row-major indices into an ``height x width`` image.
    """

    camera: Camera
    height: int
    width: int
    pixels: np.ndarray
    rgb: np.ndarray
    depth: np.ndarray

    def __len__(self) -> int:
        return int(self.pixels.size)

    def dense_depth(self) -> np.ndarray:
        out = np.zeros(self.height * self.width)
        out[self.pixels] = self.depth
        return out.reshape(self.height, self.width)

    def dense_rgb(self) -> np.ndarray:
        out = np.zeros((self.height * self.width, 3))
        out[self.pixels] = self.rgb
        return out.reshape(self.height, self.width, 3)


def canonical_jitter(poses: list[np.ndarray], sigma_t: float, sigma_r: float,
                     rng: np.random.Generator) -> list[np.ndarray]:
    """Perturb the canonical frame once and propagate it to every camera.

    ``T0' = [R(eps_r) | eps_t]`` left-multiplies each camera-to-canonical
    pose; for the world-to-camera poses used here that is ``T_i @ inv(T0')``.
    """
    if not poses:
        raise ValueError("need at least one pose")
    eps_t = rng.normal(0.0, 1.0, 3) * sigma_t
    eps_r = rng.normal(0.0, 1.0, 3) * sigma_r
    T0 = make_pose(euler_to_rotation(*eps_r), eps_t)
    T0_inv = invert_pose(T0)
    return [np.asarray(T) @ T0_inv for T in poses]


def canonical_randomize(poses: list[np.ndarray], rng: np.random.Generator,
                        index: int | None = None) -> list[np.ndarray]:
    """Re-express all poses relative to a randomly chosen camera ``o``: ``T_i @ inv(T_o)``."""
    if not poses:
        raise ValueError("need at least one pose")
    o = int(rng.integers(len(poses))) if index is None else index
    To_inv = invert_pose(np.asarray(poses[o]))
    out = [np.asarray(T) @ To_inv for T in poses]
    out[o] = np.eye(4)
    return out


def sample_virtual_camera(frames: list[PosedFrame], sigma_v: float, sigma_c: float,
                          rng: np.random.Generator, up=WORLD_UP) -> Camera:
    """Translate a random source camera and aim it at its (perturbed) pointcloud center."""
    usable = [f for f in frames if np.any(f.depth > 0)]
    if not usable:
        raise ValueError("no frame with valid depth to place a virtual camera")
    src = usable[int(rng.integers(len(usable)))]
    eps_v = rng.normal(0.0, 1.0, 3) * sigma_v
    eps_c = rng.normal(0.0, 1.0, 3) * sigma_c
    position = src.camera.center + eps_v
    target = frame_pointcloud(src).xyz.mean(axis=0) + eps_c
    return Camera(src.camera.K.copy(), lookat_pose(position, target, up))


def render_virtual_gt(frames: list[PosedFrame], cam: Camera, height: int, width: int,
                      splat_radius: int = 0) -> VirtualFrame:
    """Z-buffer the combined pointcloud of ``frames`` into ``cam``."""
    cloud = merge_pointclouds(frame_pointcloud(f, i) for i, f in enumerate(frames))
    empty = VirtualFrame(cam, height, width, np.zeros(0, dtype=np.int64), np.zeros((0, 3)),
                         np.zeros(0))
    if len(cloud) == 0:
        return empty
    uv, z, front = project(cam, cloud.xyz)
    uv, z, rgb = uv[front], z[front], cloud.rgb[front]
    col = np.rint(uv[:, 0]).astype(np.int64)
    row = np.rint(uv[:, 1]).astype(np.int64)
    if splat_radius > 0:
        offs = np.arange(-splat_radius, splat_radius + 1)
        dr, dc = np.meshgrid(offs, offs, indexing="ij")
        row = (row[:, None] + dr.reshape(1, -1)).reshape(-1)
        col = (col[:, None] + dc.reshape(1, -1)).reshape(-1)
        reps = dr.size
        z = np.repeat(z, reps)
        rgb = np.repeat(rgb, reps, axis=0)
    inside = (row >= 0) & (row < height) & (col >= 0) & (col < width)
    if not inside.any():
        return empty
    pix = row[inside] * width + col[inside]
    z, rgb = z[inside], rgb[inside]
    order = np.lexsort((z, pix))
    pix, z, rgb = pix[order], z[order], rgb[order]
    # after sorting by (pixel, depth) the first entry per pixel is the nearest
    uniq, first = np.unique(pix, return_index=True)
    return VirtualFrame(cam, height, width, uniq, rgb[first], z[first])


def virtual_to_frame(vf: VirtualFrame) -> PosedFrame:
    return PosedFrame(vf.dense_rgb(), vf.dense_depth(), vf.camera, -1)

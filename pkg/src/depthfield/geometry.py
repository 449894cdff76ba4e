"""Pinhole cameras, rigid poses and viewing rays.

Conventions used throughout the package:

* A pose ``T`` is world-to-camera (canonical-to-camera): ``x_cam = R @ x + t``.
* Pixel coordinates are ``(u, v)`` = (column, row); integer values sit on
  pixel centers.
* Depth maps hold z-depth (distance along the optical axis), 0 marks invalid.
* Euler angles are intrinsic X, then Y, then Z: ``R = Rx(phi) @ Ry(theta) @ Rz(psi)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

WORLD_UP = np.array([0.0, -1.0, 0.0])
_FALLBACK_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class Camera:
    K: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        K = np.asarray(self.K, dtype=np.float64)
        T = np.asarray(self.T, dtype=np.float64)
        if K.shape != (3, 3) or T.shape != (4, 4):
            raise ValueError(f"bad camera shapes K{K.shape} T{T.shape}")
        if not (K[0, 0] > 0 and K[1, 1] > 0):
            raise ValueError("focal lengths must be positive")
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "T", T)

    @property
    def R(self) -> np.ndarray:
        return self.T[:3, :3]

    @property
    def t(self) -> np.ndarray:
        return self.T[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera center in the canonical frame, ``-R^T t``."""
        return -self.R.T @ self.t

    def scaled(self, factor: float) -> "Camera":
        return Camera(scale_intrinsics(self.K, factor), self.T)

    def with_pose(self, T: np.ndarray) -> "Camera":
        return Camera(self.K, T)


def make_intrinsics(fx: float, fy: float, cx: float, cy: float) -> np.ndarray:
    return np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])


def scale_intrinsics(K: np.ndarray, factor: float) -> np.ndarray:
    """Intrinsics of the same camera at ``factor`` times the resolution."""
    return np.diag([factor, factor, 1.0]) @ np.asarray(K, dtype=np.float64)


def make_pose(R: np.ndarray, t: np.ndarray) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = R
    T[:3, 3] = t
    return T


def invert_pose(T: np.ndarray) -> np.ndarray:
    R = T[:3, :3]
    t = T[:3, 3]
    return make_pose(R.T, -R.T @ t)


def relative_pose(Ti: np.ndarray, Tk: np.ndarray) -> np.ndarray:
    return invert_pose(Ti) @ Tk


def euler_to_rotation(phi: float, theta: float, psi: float) -> np.ndarray:
    cx, sx = np.cos(phi), np.sin(phi)
    cy, sy = np.cos(theta), np.sin(theta)
    cz, sz = np.cos(psi), np.sin(psi)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rx @ Ry @ Rz


def rotation_to_euler(R: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`euler_to_rotation` away from theta = +-pi/2."""
    theta = np.arcsin(np.clip(R[0, 2], -1.0, 1.0))
    phi = np.arctan2(-R[1, 2], R[2, 2])
    psi = np.arctan2(-R[0, 1], R[0, 0])
    return float(phi), float(theta), float(psi)


def compute_rays(cam: Camera, uv: np.ndarray, global_rays: bool = True,
                 normalize: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Origins and directions for pixels ``uv`` of shape [N, 2].

    ``o = -R t`` and ``r = (K R)^-1 [u, v, 1]^T + t``. With ``global_rays=False``
    the translation term is dropped from the direction.
    """
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    R, t = cam.R, cam.t
    origin = -R @ t
    homog = np.concatenate([uv, np.ones((uv.shape[0], 1))], axis=1)
    KR_inv = np.linalg.inv(cam.K @ R)
    dirs = homog @ KR_inv.T
    if global_rays:
        dirs = dirs + t
    if normalize:
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(origin, dirs.shape).copy()
    return origins, dirs


def compute_ray(cam: Camera, u: float, v: float, global_rays: bool = True) -> tuple[np.ndarray, np.ndarray]:
    o, r = compute_rays(cam, np.array([[u, v]]), global_rays)
    return o[0], r[0]


def pixel_grid(height: int, width: int) -> np.ndarray:
    """[H*W, 2] array of (u, v), row-major."""
    v, u = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64),
                       indexing="ij")
    return np.stack([u.reshape(-1), v.reshape(-1)], axis=1)


def unproject(cam: Camera, uv: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """Canonical-frame points for pixels ``uv`` [N, 2] at z-depths ``depth`` [N]."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    depth = np.asarray(depth, dtype=np.float64).reshape(-1)
    if np.any(depth <= 0):
        raise ValueError("unproject needs positive depth")
    homog = np.concatenate([uv, np.ones((uv.shape[0], 1))], axis=1)
    # solve instead of inverting K explicitly
    cam_pts = np.linalg.solve(cam.K, homog.T).T * depth[:, None]
    R, t = cam.R, cam.t
    return (cam_pts - t) @ R


def project(cam: Camera, xyz: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project canonical points [N, 3] -> (uv [N, 2], z [N], in_front [N] bool).

    Points with z <= 0 get ``in_front = False`` and NaN pixel coordinates.
    """
    xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
    cam_pts = xyz @ cam.R.T + cam.t
    z = cam_pts[:, 2]
    in_front = z > 0
    pix = cam_pts @ cam.K.T
    uv = np.full((xyz.shape[0], 2), np.nan)
    uv[in_front] = pix[in_front, :2] / z[in_front, None]
    return uv, z, in_front


def lookat_pose(position, target, up=WORLD_UP) -> np.ndarray:
    """World-to-camera pose at ``position`` with +z toward ``target``.

    Camera +y is the component of ``-up`` orthogonal to the view direction.
    When the view direction is parallel to ``up`` the +z world axis is used
    as the up vector instead (or +x if that is parallel too).
    """
    position = np.asarray(position, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - position
    n = np.linalg.norm(forward)
    if n == 0:
        raise ValueError("lookat position equals target")
    z = forward / n
    up = np.asarray(up, dtype=np.float64)
    for candidate in (up, _FALLBACK_UP, np.array([1.0, 0.0, 0.0])):
        down = -(candidate - (candidate @ z) * z)
        if np.linalg.norm(down) > 1e-6 * max(np.linalg.norm(candidate), 1.0):
            break
    y = down / np.linalg.norm(down)
    x = np.cross(y, z)
    # one Gram-Schmidt pass keeps R orthonormal to machine precision
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=0)
    return make_pose(R, -R @ position)


def is_rotation(R: np.ndarray, tol: float = 1e-9) -> bool:
    return bool(np.abs(R.T @ R - np.eye(3)).max() < tol and abs(np.linalg.det(R) - 1.0) < tol)


@dataclass
class PosedFrame:
    """RGB image [H, W, 3] in [0, 1], z-depth [H, W] (0 = invalid) and camera."""

    rgb: np.ndarray
    depth: np.ndarray
    camera: Camera
    index: int = 0

    @property
    def hw(self) -> tuple[int, int]:
        return self.depth.shape

    def with_pose(self, T: np.ndarray) -> "PosedFrame":
        return PosedFrame(self.rgb, self.depth, self.camera.with_pose(T), self.index)


@dataclass
class PointCloud:
    xyz: np.ndarray
    rgb: np.ndarray
    source: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.xyz)):
            raise ValueError("pointcloud has non-finite coordinates")

    def __len__(self) -> int:
        return self.xyz.shape[0]


def frame_pointcloud(frame: PosedFrame, source: int = 0) -> PointCloud:
    """Unproject every valid depth pixel of ``frame``."""
    h, w = frame.hw
    uv = pixel_grid(h, w)
    d = frame.depth.reshape(-1)
    valid = d > 0
    xyz = unproject(frame.camera, uv[valid], d[valid]) if valid.any() else np.zeros((0, 3))
    rgb = frame.rgb.reshape(-1, 3)[valid]
    return PointCloud(xyz, rgb, np.full(xyz.shape[0], source, dtype=np.int64))


def merge_pointclouds(clouds) -> PointCloud:
    clouds = list(clouds)
    return PointCloud(np.concatenate([c.xyz for c in clouds]),
                      np.concatenate([c.rgb for c in clouds]),
                      np.concatenate([c.source for c in clouds]))

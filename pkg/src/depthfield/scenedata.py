"""Synthetic posed RGB-D scenes: raycasting, on-disk format and batch sampling.

World frame: +y points down (floor at ``y = room_max_y``). Rooms are closed
axis-aligned boxes seen from the inside; furniture is a set of axis-aligned
boxes standing on the floor. Shading is albedo only.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .geometry import Camera, PosedFrame, is_rotation, lookat_pose, make_intrinsics, pixel_grid

DEPTH_MAGIC = b"DFD1"
MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "depthfield-dataset"
MANIFEST_VERSION = 1
MODES = ("stereo", "video", "interpolate", "extrapolate")


class DatasetError(ValueError):
    """Malformed or inconsistent dataset files."""


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    height: int = 48
    width: int = 64
    frames: int = 60
    room: tuple[float, float, float] = (6.0, 3.0, 6.0)
    boxes: int = 3
    box_size: tuple[float, float] = (0.5, 1.4)
    box_spread: float = 1.2
    orbit_radius: float = 2.3
    orbit_height: float = -0.3
    orbit_degrees: float = 120.0
    position_jitter: float = 0.03
    focal_scale: float = 0.9
    checker_period: tuple[float, float] = (0.25, 0.6)

    def validate(self) -> None:
        if self.height <= 0 or self.width <= 0 or self.frames <= 0:
            raise ValueError("image size and frame count must be positive")
        if min(self.room) <= 0:
            raise ValueError("room extents must be positive")
        half = np.array(self.room) / 2
        if self.orbit_radius + self.position_jitter * 4 >= min(half[0], half[2]):
            raise ValueError("orbit leaves the room")
        if abs(self.orbit_height) >= half[1]:
            raise ValueError("orbit height outside the room")
        if self.box_spread + self.box_size[1] / 2 >= min(half[0], half[2]):
            raise ValueError("boxes do not fit in the room")
        if self.box_spread + self.box_size[1] * 0.75 >= self.orbit_radius:
            raise ValueError("camera orbit intersects furniture")


@dataclass
class Surface:
    lo: np.ndarray
    hi: np.ndarray
    albedo: np.ndarray
    period: float
    inside: bool = False


@dataclass
class Scene:
    spec: SceneSpec
    surfaces: list[Surface]
    K: np.ndarray
    poses: list[np.ndarray]


def build_scene(spec: SceneSpec) -> Scene:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    half = np.array(spec.room) / 2
    lo_p, hi_p = spec.checker_period
    room = Surface(-half, half.copy(), rng.uniform(0.35, 0.9, 3), float(rng.uniform(lo_p, hi_p)),
                   inside=True)
    surfaces = [room]
    for _ in range(spec.boxes):
        size = rng.uniform(*spec.box_size, 3)
        center = np.array([rng.uniform(-spec.box_spread, spec.box_spread), 0.0,
                           rng.uniform(-spec.box_spread, spec.box_spread)])
        lo = np.array([center[0] - size[0] / 2, half[1] - size[1], center[2] - size[2] / 2])
        hi = np.array([center[0] + size[0] / 2, half[1], center[2] + size[2] / 2])
        surfaces.append(Surface(lo, hi, rng.uniform(0.1, 1.0, 3), float(rng.uniform(lo_p, hi_p))))
    f = spec.focal_scale * spec.width
    K = make_intrinsics(f, f, (spec.width - 1) / 2, (spec.height - 1) / 2)
    start = rng.uniform(0, 2 * np.pi)
    angles = start + np.deg2rad(spec.orbit_degrees) * np.linspace(0.0, 1.0, spec.frames)
    look = np.array([0.0, half[1] * 0.4, 0.0])
    poses = []
    for a in angles:
        pos = np.array([spec.orbit_radius * np.cos(a), spec.orbit_height, spec.orbit_radius * np.sin(a)])
        pos = pos + rng.normal(0.0, spec.position_jitter, 3)
        target = look + rng.normal(0.0, 0.1, 3)
        poses.append(lookat_pose(pos, target))
    return Scene(spec, surfaces, K, poses)


def _slabs(origin: np.ndarray, dirs: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (lo - origin) * inv
        t2 = (hi - origin) * inv
    # rays parallel to a slab: inside -> unbounded, outside -> miss
    par = dirs == 0
    inside = (origin >= lo) & (origin <= hi)
    tmin = np.where(par, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    tmax = np.where(par, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    return tmin, tmax


def raycast(surfaces: list[Surface], origin: np.ndarray, dirs: np.ndarray):
    """Nearest hit per ray -> (t, rgb, surface index); t = inf on miss.

    ``dirs`` need not be unit length; ``t`` is in units of ``dirs``.
    """
    n = dirs.shape[0]
    best_t = np.full(n, np.inf)
    best_rgb = np.zeros((n, 3))
    best_id = np.full(n, -1)
    for sid, s in enumerate(surfaces):
        tmin, tmax = _slabs(origin, dirs, s.lo, s.hi)
        if s.inside:
            t = tmax.min(axis=1)
            axis = tmax.argmin(axis=1)
            hit = t > 0
        else:
            t_near = tmin.max(axis=1)
            t_far = tmax.min(axis=1)
            axis = tmin.argmax(axis=1)
            t = t_near
            hit = (t_near <= t_far) & (t_near > 0)
        closer = hit & (t < best_t)
        if not closer.any():
            continue
        pts = origin + dirs[closer] * t[closer, None]
        best_t[closer] = t[closer]
        best_rgb[closer] = _shade(s, pts, axis[closer])
        best_id[closer] = sid
    return best_t, best_rgb, best_id


def _shade(s: Surface, pts: np.ndarray, axis: np.ndarray) -> np.ndarray:
    # texture coordinates are the two in-face axes
    a_idx = np.where(axis == 0, 1, 0)
    b_idx = np.where(axis == 2, 1, 2)
    rows = np.arange(pts.shape[0])
    a = pts[rows, a_idx] - s.lo[a_idx]
    b = pts[rows, b_idx] - s.lo[b_idx]
    checker = (np.floor(a / s.period) + np.floor(b / s.period)) % 2
    shade = 0.55 + 0.45 * checker
    face_tint = 0.85 + 0.05 * axis
    return np.clip(s.albedo[None, :] * (shade * face_tint)[:, None], 0.0, 1.0)


def render_view(scene: Scene, T: np.ndarray, height: int, width: int, K: np.ndarray | None = None):
    """Raycast one camera -> (rgb [H, W, 3], z-depth [H, W], surface ids [H, W])."""
    cam = Camera(scene.K if K is None else K, T)
    uv = pixel_grid(height, width)
    homog = np.concatenate([uv, np.ones((uv.shape[0], 1))], axis=1)
    # camera-frame rays with unit z, so the ray parameter is the z-depth
    d_cam = np.linalg.solve(cam.K, homog.T).T
    dirs = d_cam @ cam.R
    t, rgb, ids = raycast(scene.surfaces, cam.center, dirs)
    depth = np.where(np.isfinite(t), t, 0.0)
    return rgb.reshape(height, width, 3), depth.reshape(height, width), ids.reshape(height, width)


def quantize_rgb(rgb: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(rgb, 0.0, 1.0) * 255.0) / 255.0


def quantize_depth(depth: np.ndarray) -> np.ndarray:
    return depth.astype("<f4").astype(np.float64)


def generate_scene(spec: SceneSpec, min_visible_fraction: float = 0.9) -> list[PosedFrame]:
    """Render every frame of ``spec``; values are pre-quantized to the on-disk precision."""
    scene = build_scene(spec)
    frames = []
    visible = 0
    for i, T in enumerate(scene.poses):
        rgb, depth, ids = render_view(scene, T, spec.height, spec.width)
        if np.mean(ids > 0) >= 0.01:
            visible += 1
        frames.append(PosedFrame(quantize_rgb(rgb), quantize_depth(depth), Camera(scene.K, T), i))
    if spec.boxes and visible < min_visible_fraction * len(frames):
        raise ValueError(f"degenerate trajectory: furniture visible in {visible}/{len(frames)} frames")
    return frames


# -- on-disk format ---------------------------------------------------------

@dataclass(frozen=True)
class SceneEntry:
    name: str
    split: str
    frames: int
    height: int
    width: int
    seed: int = 0


@dataclass
class DatasetManifest:
    scenes: list[SceneEntry]
    stride: int = 3
    context: int = 3
    seed: int = 0
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        names = [s.name for s in self.scenes]
        if len(set(names)) != len(names):
            raise DatasetError("scene listed more than once (train/test overlap)")
        for s in self.scenes:
            if s.split not in ("train", "test"):
                raise DatasetError(f"unknown split {s.split!r} for scene {s.name}")

    def split(self, name: str) -> list[SceneEntry]:
        return [s for s in self.scenes if s.split == name]

    def to_json(self) -> str:
        body = {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "seed": self.seed,
                "stride": self.stride, "context": self.context,
                "scenes": [asdict(s) for s in self.scenes]}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str, root: Path | None = None) -> "DatasetManifest":
        try:
            body = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{MANIFEST_NAME}: {exc}") from None
        if body.get("format") != MANIFEST_FORMAT or body.get("version") != MANIFEST_VERSION:
            raise DatasetError(f"{MANIFEST_NAME}: unsupported format/version")
        return cls([SceneEntry(**s) for s in body["scenes"]], body.get("stride", 3),
                   body.get("context", 3), body.get("seed", 0), root)


def _fmt_floats(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values).reshape(-1))


def write_ppm(path, rgb: np.ndarray) -> None:
    h, w, _ = rgb.shape
    data = np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def read_ppm(path) -> np.ndarray:
    path = Path(path)
    buf = path.read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DatasetError(f"{path.name}: truncated PPM header")
        tokens.append(buf[start:pos])
    pos += 1
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise DatasetError(f"{path.name}: not a binary 8-bit PPM")
    w, h = int(tokens[1]), int(tokens[2])
    body = buf[pos:]
    if len(body) != w * h * 3:
        raise DatasetError(f"{path.name}: expected {w * h * 3} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


def write_depth(path, depth: np.ndarray) -> None:
    h, w = depth.shape
    Path(path).write_bytes(DEPTH_MAGIC + struct.pack("<II", h, w) + depth.astype("<f4").tobytes())


def read_depth(path) -> np.ndarray:
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < 12 or buf[:4] != DEPTH_MAGIC:
        raise DatasetError(f"{path.name}: bad depth header")
    h, w = struct.unpack("<II", buf[4:12])
    if len(buf) != 12 + 4 * h * w:
        raise DatasetError(f"{path.name}: truncated depth data ({len(buf) - 12} of {4 * h * w} bytes)")
    return np.frombuffer(buf[12:], dtype="<f4").reshape(h, w).astype(np.float64)


def write_pose(path, T: np.ndarray) -> None:
    Path(path).write_text(_fmt_floats(T) + "\n")


def _read_floats(path, n: int) -> np.ndarray:
    path = Path(path)
    try:
        vals = [float(v) for v in path.read_text().split()]
    except ValueError:
        raise DatasetError(f"{path.name}: non-numeric entry") from None
    if len(vals) != n:
        raise DatasetError(f"{path.name}: expected {n} floats, found {len(vals)}")
    return np.array(vals)


def read_pose(path) -> np.ndarray:
    T = _read_floats(path, 16).reshape(4, 4)
    if not is_rotation(T[:3, :3], 1e-6) or not np.allclose(T[3], [0, 0, 0, 1]):
        raise DatasetError(f"{Path(path).name}: pose is not rigid")
    return T


def read_intrinsics(path) -> np.ndarray:
    K = _read_floats(path, 9).reshape(3, 3)
    if not (K[0, 0] > 0 and K[1, 1] > 0):
        raise DatasetError(f"{Path(path).name}: non-positive focal length")
    return K


def save_scene(frames: list[PosedFrame], scene_dir) -> None:
    scene_dir = Path(scene_dir)
    scene_dir.mkdir(parents=True, exist_ok=True)
    Path(scene_dir / "intrinsics.txt").write_text(_fmt_floats(frames[0].camera.K) + "\n")
    for i, f in enumerate(frames):
        if not np.array_equal(f.camera.K, frames[0].camera.K):
            raise ValueError("all frames of a scene must share intrinsics")
        stem = scene_dir / f"{i:06d}"
        write_ppm(stem.with_suffix(".ppm"), f.rgb)
        write_depth(stem.with_suffix(".depth"), f.depth)
        write_pose(stem.with_suffix(".pose"), f.camera.T)


def load_scene(scene_dir, n_frames: int) -> list[PosedFrame]:
    scene_dir = Path(scene_dir)
    if not scene_dir.is_dir():
        raise DatasetError(f"missing scene directory {scene_dir.name}")
    K = read_intrinsics(scene_dir / "intrinsics.txt")
    frames = []
    for i in range(n_frames):
        stem = scene_dir / f"{i:06d}"
        for suffix in (".ppm", ".depth", ".pose"):
            if not stem.with_suffix(suffix).exists():
                raise DatasetError(f"missing file {stem.with_suffix(suffix).name} in {scene_dir.name}")
        rgb = read_ppm(stem.with_suffix(".ppm"))
        depth = read_depth(stem.with_suffix(".depth"))
        if rgb.shape[:2] != depth.shape:
            raise DatasetError(f"{stem.name}: rgb and depth sizes differ")
        if np.any(depth < 0) or not np.all(np.isfinite(depth)):
            raise DatasetError(f"{stem.with_suffix('.depth').name}: negative or non-finite depth")
        frames.append(PosedFrame(rgb, depth, Camera(K, read_pose(stem.with_suffix(".pose"))), i))
    return frames


def save_dataset(out_dir, scenes: dict[str, list[PosedFrame]], manifest: DatasetManifest) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for entry in manifest.scenes:
        save_scene(scenes[entry.name], out_dir / entry.name)
    (out_dir / MANIFEST_NAME).write_text(manifest.to_json())


def load_manifest(root) -> DatasetManifest:
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.exists():
        raise DatasetError(f"no {MANIFEST_NAME} in {root}")
    return DatasetManifest.from_json(path.read_text(), root)


def load_dataset(root) -> tuple[DatasetManifest, dict[str, list[PosedFrame]]]:
    manifest = load_manifest(root)
    scenes = {s.name: load_scene(Path(root) / s.name, s.frames) for s in manifest.scenes}
    for s in manifest.scenes:
        h, w = scenes[s.name][0].hw
        if (h, w) != (s.height, s.width):
            raise DatasetError(f"{s.name}: manifest says {s.height}x{s.width}, files are {h}x{w}")
    return manifest, scenes


@dataclass(frozen=True)
class DatasetSpec:
    seed: int = 0
    train_scenes: int = 8
    test_scenes: int = 2
    scene: SceneSpec = field(default_factory=SceneSpec)
    stride: int = 3


def generate_dataset(spec: DatasetSpec) -> tuple[DatasetManifest, dict[str, list[PosedFrame]]]:
    scenes: dict[str, list[PosedFrame]] = {}
    entries = []
    total = spec.train_scenes + spec.test_scenes
    for i in range(total):
        split = "train" if i < spec.train_scenes else "test"
        seed = spec.seed * 1000 + i
        name = f"scene_{i:03d}"
        s = SceneSpec(**{**asdict(spec.scene), "seed": seed})
        scenes[name] = generate_scene(s)
        entries.append(SceneEntry(name, split, s.frames, s.height, s.width, seed))
    return DatasetManifest(entries, spec.stride, 3, spec.seed), scenes


# -- context protocols ------------------------------------------------------

def protocol_indices(mode: str, t: int, stride: int = 3, window: int = 3) -> tuple[list[int], list[int]]:
    """(targets, context) frame indices around ``t``.

    ``video`` takes the offsets ``-window..window`` with step ``stride``,
    excluding 0; ``stereo`` pairs ``t`` with ``t + stride``.
    """
    if mode == "stereo":
        return [t], [t + stride]
    if mode == "video":
        offs = [k for k in range(-window, window + 1, stride) if k != 0]
        return [t], [t + k for k in offs]
    if mode == "interpolate":
        return list(range(t - 4, t + 5)), [t - 5, t + 5]
    if mode == "extrapolate":
        return list(range(t, t + 9)), list(range(t - 5, t))
    raise ValueError(f"unknown mode {mode!r}")


def valid_targets(mode: str, n_frames: int, stride: int = 3, window: int = 3) -> list[int]:
    out = []
    for t in range(n_frames):
        tg, ctx = protocol_indices(mode, t, stride, window)
        idx = tg + ctx
        if min(idx) >= 0 and max(idx) < n_frames:
            out.append(t)
    return out


def sample_batch(manifest: DatasetManifest, scenes: dict[str, list[PosedFrame]], mode: str,
                 rng: np.random.Generator, split: str = "train"):
    """Random (targets, context) frame lists from one scene of ``split``."""
    entries = manifest.split(split)
    if not entries:
        raise DatasetError(f"no {split} scenes")
    entry = entries[int(rng.integers(len(entries)))]
    ts = valid_targets(mode, entry.frames, manifest.stride, manifest.context)
    if not ts:
        raise DatasetError(f"scene {entry.name} has too few frames for {mode}")
    t = ts[int(rng.integers(len(ts)))]
    tg, ctx = protocol_indices(mode, t, manifest.stride, manifest.context)
    frames = scenes[entry.name]
    return [frames[i] for i in tg], [frames[i] for i in ctx]

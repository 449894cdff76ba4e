"""Command handlers shared by the CLI and the HTTP API.

Every handler raises a :class:`ServiceError` subclass whose ``exit_code``
matches the CLI contract: 1 usage, 2 data, 3 numeric failure.
"""
from __future__ import annotations

import contextlib
import csv
import hashlib
import logging
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, RunConfig, dump_config, load_config, load_dataset_spec
from .geometry import Camera
from .model import CheckpointError
from .objective import METRIC_NAMES, LossWeights, write_metrics_csv
from .pipeline import (EVAL_PROTOCOLS, ConfigMismatch, ModelPredictor, NumericFailure, Trainer,
                       evaluate_fixed, evaluate_protocol, load_model)
from .scenedata import (DatasetError, DatasetSpec, generate_dataset, load_dataset, read_intrinsics,
                        read_pose, save_dataset, write_depth, write_ppm)
from .tensor import NonFiniteError

log = logging.getLogger(__name__)


class ServiceError(Exception):
    exit_code = 1


class UsageError(ServiceError):
    exit_code = 1


class DataError(ServiceError):
    exit_code = 2


class NumericError(ServiceError):
    exit_code = 3


@contextlib.contextmanager
def _errors():
    try:
        yield
    except ServiceError:
        raise
    except (NumericFailure, NonFiniteError) as exc:
        raise NumericError(str(exc)) from exc
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    except (DatasetError, CheckpointError, ConfigMismatch, OSError) as exc:
        raise DataError(str(exc)) from exc


def dataset_digest(root) -> tuple[int, str]:
    """Total byte count and sha256 over every file (sorted relative paths plus contents)."""
    root = Path(root)
    h = hashlib.sha256()
    total = 0
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        data = path.read_bytes()
        total += len(data)
        h.update(path.relative_to(root).as_posix().encode())
        h.update(data)
    return total, h.hexdigest()


def generate(out, spec: DatasetSpec | str | Path | None = None, seed: int | None = None) -> dict:
    with _errors():
        if spec is None:
            spec = DatasetSpec()
        elif not isinstance(spec, DatasetSpec):
            spec = load_dataset_spec(spec)
        if seed is not None:
            spec = replace(spec, seed=seed)
        try:
            manifest, scenes = generate_dataset(spec)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        save_dataset(out, scenes, manifest)
        nbytes, digest = dataset_digest(out)
    return {"out": str(out), "scenes": len(manifest.scenes),
            "train": len(manifest.split("train")), "test": len(manifest.split("test")),
            "frames": sum(s.frames for s in manifest.scenes), "bytes": nbytes, "sha256": digest}


def resolve_config(config: RunConfig | str | Path | None, seed: int | None = None,
                   out: str | None = None, dataset: str | None = None) -> RunConfig:
    with _errors():
        cfg = config if isinstance(config, RunConfig) else (
            RunConfig() if config is None else load_config(config))
    updates = {k: v for k, v in (("seed", seed), ("out", out), ("dataset", dataset)) if v is not None}
    return cfg.replace(**updates) if updates else cfg


def _load_data(root):
    if not root:
        raise UsageError("no dataset given")
    with _errors():
        return load_dataset(root)


def train(config: RunConfig | str | Path | None, seed: int | None = None, out: str | None = None,
          dataset: str | None = None, log_every: int = 0) -> dict:
    cfg = resolve_config(config, seed, out, dataset)
    manifest, scenes = _load_data(cfg.dataset)
    out_dir = Path(cfg.out)
    with _errors():
        try:
            trainer = Trainer(cfg, manifest, scenes)
        except KeyError as exc:
            raise DataError(str(exc)) from exc
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.ini").write_text(dump_config(cfg))
        result = trainer.run(out_dir, log_every=log_every)
    last = result.losses[-1] if result.losses else {}
    return {"out": str(out_dir), "steps": len(result.losses), "final_loss": last.get("loss"),
            "checkpoint": str(result.checkpoint), "metrics": result.metrics,
            "digest": cfg.digest}


def evaluate(checkpoint, protocol: str, dataset: str | None = None, out=None,
             config: RunConfig | str | Path | None = None, split: str = "test",
             samples: int = 4) -> list[dict]:
    """Metric rows for ``protocol``; ``fixed`` re-evaluates the training views of a fixed-mode run."""
    if protocol not in EVAL_PROTOCOLS + ("fixed",):
        raise UsageError(f"unknown protocol {protocol!r}; choose from "
                         f"{', '.join(EVAL_PROTOCOLS + ('fixed',))}")
    expected = resolve_config(config) if config is not None else None
    with _errors():
        model, cfg = load_model(checkpoint, expected)
    manifest, scenes = _load_data(dataset or cfg.dataset)
    predictor = ModelPredictor.for_run(model, cfg)
    with _errors():
        if protocol == "fixed":
            tc = cfg.train
            if tc.mode != "fixed":
                raise UsageError("checkpoint was not trained in fixed mode")
            if tc.scene and tc.scene not in scenes:
                raise DataError(f"unknown scene {tc.scene!r}")
            scene = tc.scene or manifest.split("train")[0].name
            rows = evaluate_fixed(predictor, scenes[scene], tc.frames, tc.heldout)
        else:
            try:
                rows = evaluate_protocol(predictor, manifest, scenes, protocol, split, samples)
            except ValueError as exc:
                raise DataError(str(exc)) from exc
        if out is not None:
            Path(out).parent.mkdir(parents=True, exist_ok=True)
            write_metrics_csv(out, rows)
    return rows


def query(checkpoint, pose, out, dataset: str | None = None, scene: str | None = None,
          frames=(0,), intrinsics=None, height: int | None = None,
          width: int | None = None) -> dict:
    """Encode ``frames`` of ``scene`` once and decode depth and RGB at ``pose``."""
    with _errors():
        model, cfg = load_model(checkpoint)
        T = read_pose(pose)
    manifest, scenes = _load_data(dataset or cfg.dataset)
    name = scene or manifest.scenes[0].name
    if name not in scenes:
        raise DataError(f"unknown scene {name!r}")
    views = scenes[name]
    if not frames or min(frames) < 0 or max(frames) >= len(views):
        raise UsageError(f"frame indices must lie in 0..{len(views) - 1}")
    encoded = [views[i] for i in frames]
    h0, w0 = encoded[0].hw
    h, w = height or h0, width or w0
    with _errors():
        K = read_intrinsics(intrinsics) if intrinsics else encoded[0].camera.K
        predictor = ModelPredictor.for_run(model, cfg)
        latent = predictor.encode(encoded)
        cam = Camera(K, T)
        depth = predictor.depth(latent, cam, h, w)
        rgb = predictor.rgb(latent, cam, h, w)
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_depth(out / "query.depth", depth)
        write_ppm(out / "query.ppm", rgb)
    return {"depth": str(out / "query.depth"), "rgb": str(out / "query.ppm"), "height": h,
            "width": w, "depth_range": [float(depth.min()), float(depth.max())]}


ABLATIONS = {
    "virtual": ("virtual augmentation", lambda c, on: c.replace(
        augment=replace(c.augment, virtual=on))),
    "synthesis": ("view synthesis loss", lambda c, on: c.replace(
        loss=replace(c.loss, synthesis=LossWeights().synthesis if on else 0.0))),
}


def ablate(config: RunConfig | str | Path | None, factor: str, out=None, seed: int | None = None,
           dataset: str | None = None) -> list[dict]:
    """Train the same config with ``factor`` on and off; writes one summary CSV."""
    if factor not in ABLATIONS:
        raise UsageError(f"unknown ablation {factor!r}; choose from {', '.join(ABLATIONS)}")
    base = resolve_config(config, seed, out, dataset)
    toggle = ABLATIONS[factor][1]
    rows = []
    for label, on in (("on", True), ("off", False)):
        cfg = toggle(base, on).replace(out=str(Path(base.out) / f"{factor}-{label}"))
        res = train(cfg)
        for r in _final_rows(res["metrics"]):
            rows.append({**r, "split": f"{factor}-{label}/{r['split']}"})
    write_metrics_csv(Path(base.out) / "summary.csv", rows)
    return rows


def _final_rows(rows: list[dict]) -> list[dict]:
    if not rows:
        return []
    last = max(r["step"] for r in rows)
    return [r for r in rows if r["step"] == last]


def read_csv(path) -> list[dict]:
    """Metrics CSV back into dicts with numeric metric columns."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        for k in METRIC_NAMES:
            if r.get(k) not in (None, ""):
                r[k] = float(r[k])
    return rows


__all__ = ["ABLATIONS", "DataError", "NumericError", "ServiceError", "UsageError", "ablate",
           "dataset_digest", "evaluate", "generate", "query", "read_csv", "resolve_config",
           "train"]

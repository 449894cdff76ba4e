"""Training loop, evaluation protocols and arbitrary-viewpoint queries."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import (AugmentConfig, canonical_jitter, canonical_randomize, render_virtual_gt,
                      sample_virtual_camera)
from .config import RunConfig, config_from_json
from .embeddings import assemble_decoder_queries
from .geometry import Camera, PosedFrame, invert_pose
from .model import DepthFieldModel, load_checkpoint, save_checkpoint
from .objective import (average_metrics, depth_loss, median_scale, metrics, rgb_loss, total_loss,
                        write_metrics_csv)
from .scenedata import DatasetManifest, protocol_indices, sample_batch, valid_targets
from .tensor import AdamState, Parameter, NonFiniteError, adam_step, backward, dtype_scope, no_grad, zero_grads

log = logging.getLogger(__name__)

_STREAMS = {"init": 0, "data": 1, "augment": 2, "queries": 3}
EVAL_PROTOCOLS = ("stereo", "video", "zero-shot", "interpolate", "extrapolate")
LOSS_COLUMNS = ("step", "loss", "depth", "synthesis", "depth_virtual", "synthesis_virtual")


class NumericFailure(RuntimeError):
    def __init__(self, step: int, detail: str):
        super().__init__(f"non-finite value at step {step}: {detail}")
        self.step = step


class ConfigMismatch(ValueError):
    pass


def run_dtype(cfg: RunConfig):
    return np.float32 if cfg.train.dtype == "float32" else np.float64


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, _STREAMS[name]])


def augment_frames(frames: list[PosedFrame], cfg: AugmentConfig,
                   rng: np.random.Generator) -> list[PosedFrame]:
    """Canonical randomization, then canonical jittering; identity when both are off."""
    if not (cfg.randomize or cfg.jitter):
        return frames
    poses = [f.camera.T for f in frames]
    if cfg.randomize:
        poses = canonical_randomize(poses, rng)
    if cfg.jitter:
        poses = canonical_jitter(poses, cfg.sigma_t, cfg.sigma_r, rng)
    return [f.with_pose(T) for f, T in zip(frames, poses)]


@dataclass
class Encoded:
    """Latent of a set of frames plus the map from world to their canonical frame."""

    latent: object
    to_canonical: np.ndarray


class ModelPredictor:
    """Encode once, decode any number of views (decoding is chunked by ``chunk`` queries).

    With ``canonical`` set, poses are re-expressed relative to the first
    encoded camera, matching what canonical randomization shows the model
    during training; depth is unaffected by that change of world frame.
    """

    def __init__(self, model: DepthFieldModel, chunk: int = 4096, dtype=np.float64,
                 canonical: bool = True):
        self.model = model
        self.chunk = chunk
        self.dtype = dtype
        self.canonical = canonical

    @classmethod
    def for_run(cls, model: DepthFieldModel, cfg: RunConfig, **kw) -> "ModelPredictor":
        return cls(model, dtype=run_dtype(cfg), canonical=cfg.augment.randomize, **kw)

    def encode(self, frames: list[PosedFrame]) -> Encoded:
        if not self.canonical:
            with no_grad(), dtype_scope(self.dtype):
                return Encoded(self.model.encode_frames(frames), np.eye(4))
        to_canonical = invert_pose(frames[0].camera.T)
        frames = [f.with_pose(f.camera.T @ to_canonical) for f in frames]
        with no_grad(), dtype_scope(self.dtype):
            return Encoded(self.model.encode_frames(frames), to_canonical)

    def _decode(self, enc: Encoded, cam: Camera, height: int, width: int, head: str) -> np.ndarray:
        emb = self.model.cfg.embedding
        cam = cam.with_pose(cam.T @ enc.to_canonical)
        latent = enc.latent
        n = height * width
        outs = []
        with no_grad(), dtype_scope(self.dtype):
            for start in range(0, n, self.chunk):
                idx = np.arange(start, min(n, start + self.chunk))
                q = assemble_decoder_queries(cam, height, width, emb, idx)
                fn = self.model.decode_depth if head == "depth" else self.model.decode_rgb
                outs.append(fn(latent, q).data)
        return np.concatenate(outs, axis=0)

    def depth(self, enc: Encoded, cam: Camera, height: int, width: int) -> np.ndarray:
        return self._decode(enc, cam, height, width, "depth").reshape(height, width)

    def rgb(self, enc: Encoded, cam: Camera, height: int, width: int) -> np.ndarray:
        return self._decode(enc, cam, height, width, "rgb").reshape(height, width, 3)


# -- training ---------------------------------------------------------------

@dataclass
class TrainResult:
    losses: list[dict] = field(default_factory=list)
    metrics: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None


class Trainer:
    def __init__(self, cfg: RunConfig, manifest: DatasetManifest,
                 scenes: dict[str, list[PosedFrame]]):
        self.dtype = run_dtype(cfg)
        self.cfg = cfg
        self.manifest = manifest
        self.scenes = scenes
        init_rng = substream(cfg.seed, "init")
        with dtype_scope(self.dtype):
            self.model = DepthFieldModel(cfg.model, seed=int(init_rng.integers(2**31)))
        self.opt = AdamState()
        self.data_rng = substream(cfg.seed, "data")
        self.aug_rng = substream(cfg.seed, "augment")
        self.query_rng = substream(cfg.seed, "queries")
        self.step_count = 0
        if cfg.train.mode == "fixed":
            scene = cfg.train.scene or manifest.split("train")[0].name
            if scene not in scenes:
                raise KeyError(f"unknown scene {scene!r}")
            self.fixed_scene = scene

    def sample(self) -> tuple[list[PosedFrame], int]:
        """Frames to encode and how many leading frames are supervised."""
        tc = self.cfg.train
        if tc.mode == "fixed":
            frames = [self.scenes[self.fixed_scene][i] for i in tc.frames]
            return frames, len(frames)
        targets, context = sample_batch(self.manifest, self.scenes, tc.mode, self.data_rng)
        return targets + context, (len(targets) + len(context) if tc.supervise_context
                                   else len(targets))

    def _pick(self, pool: np.ndarray, k: int) -> np.ndarray:
        if k <= 0 or pool.size <= k:
            return pool
        return np.sort(self.query_rng.choice(pool, size=k, replace=False))

    def _view_losses(self, latent, cam, h, w, pixels, gt_depth, gt_rgb, with_rgb: bool):
        emb = self.cfg.model.embedding
        q = assemble_decoder_queries(cam, h, w, emb, pixels)
        ld = depth_loss(self.model.decode_depth(latent, q), gt_depth)
        ls = rgb_loss(self.model.decode_rgb(latent, q), gt_rgb) if with_rgb else 0.0
        return ld, ls

    def step(self) -> dict:
        with dtype_scope(self.dtype):
            return self._step()

    def _step(self) -> dict:
        cfg, tc = self.cfg, self.cfg.train
        frames, n_sup = self.sample()
        frames = augment_frames(frames, cfg.augment, self.aug_rng)
        with_rgb = cfg.loss.synthesis > 0
        latent = self.model.encode_frames(frames)

        d_terms, s_terms = [], []
        for f in frames[:n_sup]:
            h, w = f.hw
            valid = np.flatnonzero(f.depth.reshape(-1) > 0)
            pix = self._pick(valid, tc.queries_per_view)
            ld, ls = self._view_losses(latent, f.camera, h, w, pix, f.depth.reshape(-1)[pix],
                                       f.rgb.reshape(-1, 3)[pix], with_rgb)
            d_terms.append(ld)
            s_terms.append(ls)
        L_d = _mean_terms(d_terms)
        L_s = _mean_terms(s_terms)

        dv_terms, sv_terms = [], []
        if cfg.augment.virtual and cfg.loss.virtual > 0:
            h, w = frames[0].hw
            for _ in range(cfg.augment.virtual_count):
                cam = sample_virtual_camera(frames, cfg.augment.sigma_v, cfg.augment.sigma_c,
                                            self.aug_rng)
                vf = render_virtual_gt(frames, cam, h, w, cfg.augment.splat_radius)
                if len(vf) == 0:
                    continue
                sel = self._pick(np.arange(len(vf)), tc.virtual_queries)
                ld, ls = self._view_losses(latent, cam, h, w, vf.pixels[sel], vf.depth[sel],
                                           vf.rgb[sel], with_rgb)
                dv_terms.append(ld)
                sv_terms.append(ls)
        L_dv = _mean_terms(dv_terms)
        L_sv = _mean_terms(sv_terms)

        loss = total_loss(L_d, L_s, L_dv, L_sv, cfg.loss)
        self.step_count += 1
        value = float(loss.item())
        if not math.isfinite(value):
            raise NumericFailure(self.step_count, "loss")
        zero_grads(self.model.params)
        backward(loss)
        for name, p in self.model.params.items():
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise NumericFailure(self.step_count, f"gradient of {name}")
        o = cfg.optim
        adam_step(self.model.params, self.opt, o.lr, o.beta1, o.beta2, o.eps)
        return {"step": self.step_count, "loss": value, "depth": _val(L_d),
                "synthesis": _val(L_s), "depth_virtual": _val(L_dv),
                "synthesis_virtual": _val(L_sv)}

    def evaluate(self) -> list[dict]:
        tc = self.cfg.train
        pred = ModelPredictor.for_run(self.model, self.cfg)
        if tc.mode == "fixed":
            return evaluate_fixed(pred, self.scenes[self.fixed_scene], tc.frames, tc.heldout,
                                  self.step_count)
        rows = evaluate_protocol(pred, self.manifest, self.scenes,
                                 "stereo" if tc.mode == "stereo" else "video", tc.eval_split,
                                 samples_per_scene=2)
        for r in rows:
            r["step"] = self.step_count
        return rows

    def run(self, out_dir=None, log_every: int = 0) -> TrainResult:
        tc = self.cfg.train
        out = Path(out_dir) if out_dir is not None else None
        result = TrainResult()
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            loss_path = out / "loss.csv"
            with loss_path.open("w", newline="") as fh:
                csv.writer(fh, lineterminator="\n").writerow(LOSS_COLUMNS)
            metrics_path = out / "metrics.csv"
        for _ in range(tc.steps):
            try:
                row = self.step()
            except NonFiniteError as exc:
                raise NumericFailure(self.step_count + 1, str(exc)) from None
            result.losses.append(row)
            if out is not None:
                with loss_path.open("a", newline="") as fh:
                    csv.writer(fh, lineterminator="\n").writerow([_fmt(row[k]) for k in LOSS_COLUMNS])
            if log_every and row["step"] % log_every == 0:
                log.info("step %d loss %.5f", row["step"], row["loss"])
            if tc.eval_every and row["step"] % tc.eval_every == 0:
                rows = self.evaluate()
                result.metrics.extend(rows)
                if out is not None:
                    # the first write sets the header, extra columns included
                    write_metrics_csv(metrics_path, rows, append=len(result.metrics) > len(rows))
        if out is not None:
            if not result.metrics:
                write_metrics_csv(metrics_path, [])
            result.checkpoint = out / "model.ckpt"
            save_checkpoint(result.checkpoint, self.model.params, self.cfg.to_json())
        return result


def _mean_terms(terms):
    terms = [t for t in terms if not isinstance(t, float)]
    if not terms:
        return 0.0
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def _val(x) -> float:
    return float(x) if isinstance(x, float) else float(x.item())


def _fmt(v):
    return repr(float(v)) if isinstance(v, float) else v


# -- evaluation -------------------------------------------------------------

def _eval_targets(mode: str, n_frames: int, stride: int, window: int, samples: int) -> list[int]:
    ts = valid_targets(mode, n_frames, stride, window)
    if not ts:
        return []
    if samples <= 0 or samples >= len(ts):
        return ts
    picks = np.linspace(0, len(ts) - 1, samples).round().astype(int)
    return [ts[i] for i in sorted(set(picks.tolist()))]


def evaluate_protocol(predictor, manifest: DatasetManifest, scenes, protocol: str,
                      split: str = "test", samples_per_scene: int = 4) -> list[dict]:
    """Metric rows for one protocol over every scene of ``split``."""
    if protocol not in EVAL_PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    if protocol in ("interpolate", "extrapolate"):
        return evaluate_novel_views(predictor, manifest, scenes, protocol, split, samples_per_scene)
    mode = "video" if protocol == "zero-shot" else protocol
    per_sample = []
    for entry in manifest.split(split):
        frames = scenes[entry.name]
        for t in _eval_targets(mode, entry.frames, manifest.stride, manifest.context,
                               samples_per_scene):
            tg, ctx = protocol_indices(mode, t, manifest.stride, manifest.context)
            encoded = [frames[i] for i in tg + ctx]
            target = frames[tg[0]]
            latent = predictor.encode(encoded)
            h, w = target.hw
            depth = predictor.depth(latent, target.camera, h, w)
            mask = target.depth > 0
            if protocol == "zero-shot":
                depth = median_scale(depth, target.depth, mask)
            per_sample.append(metrics(depth, target.depth, mask))
    if not per_sample:
        raise ValueError(f"no {split} samples for protocol {protocol}")
    return [{"split": f"{split}/{protocol}", "step": 0, **average_metrics(per_sample),
             "samples": len(per_sample)}]


def project_predictions(encoded: list[PosedFrame], depths: list[np.ndarray], cam: Camera,
                        height: int, width: int) -> np.ndarray:
    """Explicit baseline: splat encoded-view depth predictions into ``cam``; 0 = not covered."""
    frames = [PosedFrame(f.rgb, d, f.camera, f.index) for f, d in zip(encoded, depths)]
    return render_virtual_gt(frames, cam, height, width).dense_depth()


def evaluate_novel_views(predictor, manifest: DatasetManifest, scenes, protocol: str,
                         split: str = "test", samples_per_scene: int = 4) -> list[dict]:
    """Per-offset rows for latent querying and explicit projection."""
    per_offset: dict[int, dict[str, list]] = {}
    for entry in manifest.split(split):
        frames = scenes[entry.name]
        for t in _eval_targets(protocol, entry.frames, manifest.stride, manifest.context,
                               samples_per_scene):
            tg, ctx = protocol_indices(protocol, t, manifest.stride, manifest.context)
            encoded = [frames[i] for i in ctx]
            latent = predictor.encode(encoded)
            enc_depths = [predictor.depth(latent, f.camera, *f.hw) for f in encoded]
            for i in tg:
                target = frames[i]
                h, w = target.hw
                gt = target.depth
                valid = gt > 0
                q = predictor.depth(latent, target.camera, h, w)
                proj = project_predictions(encoded, enc_depths, target.camera, h, w)
                covered = valid & (proj > 0)
                bucket = per_offset.setdefault(i - t, {"query": [], "projection": []})
                q_row = metrics(q, gt, valid)
                q_row["coverage"] = 1.0
                q_row["RMSE_common"] = _rmse(q, gt, covered)
                bucket["query"].append(q_row)
                if covered.any():
                    p_row = metrics(proj, gt, covered)
                    p_row["RMSE_common"] = p_row["RMSE"]
                else:
                    p_row = {k: float("nan") for k in ("AbsRel", "SqRel", "RMSE", "d1", "d2", "d3",
                                                       "RMSE_common")}
                p_row["coverage"] = float(covered.sum() / max(valid.sum(), 1))
                bucket["projection"].append(p_row)
    rows = []
    for offset in sorted(per_offset):
        for mode in ("query", "projection"):
            samples = per_offset[offset][mode]
            keys = samples[0].keys()
            avg = {k: float(np.nanmean([s[k] for s in samples])) if not all(
                np.isnan(s[k]) for s in samples) else float("nan") for k in keys}
            rows.append({"split": f"{split}/{protocol}-{mode}", "step": 0, **avg,
                         "offset": offset, "samples": len(samples)})
    return rows


def _rmse(pred, gt, mask) -> float:
    if not mask.any():
        return float("nan")
    d = pred[mask] - gt[mask]
    return float(np.sqrt(np.mean(d * d)))


def evaluate_fixed(predictor, frames: list[PosedFrame], encoded_idx, heldout_idx,
                   step: int = 0) -> list[dict]:
    """Metrics on the encoded views and, if given, on held-out views of the same scene."""
    encoded = [frames[i] for i in encoded_idx]
    latent = predictor.encode(encoded)
    rows = []
    for label, idx in (("encoded", encoded_idx), ("heldout", heldout_idx)):
        if not idx:
            continue
        per = []
        for i in idx:
            f = frames[i]
            d = predictor.depth(latent, f.camera, *f.hw)
            per.append(metrics(d, f.depth, f.depth > 0))
        rows.append({"split": label, "step": step, **average_metrics(per), "samples": len(per)})
    return rows


# -- checkpoints ------------------------------------------------------------

def load_model(checkpoint, expected: RunConfig | None = None) -> tuple[DepthFieldModel, RunConfig]:
    params, cfg_json = load_checkpoint(checkpoint)
    cfg = config_from_json(cfg_json)
    if expected is not None and expected.digest != cfg.digest:
        raise ConfigMismatch(f"checkpoint config digest {cfg.digest[:12]} does not match "
                             f"{expected.digest[:12]}")
    with dtype_scope(run_dtype(cfg)):
        shapes = {n: p.shape for n, p in DepthFieldModel(cfg.model).params.items()}
        if {n: p.shape for n, p in params.items()} != shapes:
            raise ConfigMismatch("checkpoint parameters do not match the stored model config")
        model = DepthFieldModel(cfg.model, {n: Parameter(p.data, n) for n, p in params.items()})
    return model, cfg


def query_view(model: DepthFieldModel, frames: list[PosedFrame], cam: Camera, height: int,
               width: int, dtype=np.float64,
               canonical: bool = True) -> tuple[np.ndarray, np.ndarray]:
    pred = ModelPredictor(model, dtype=dtype, canonical=canonical)
    latent = pred.encode(frames)
    return pred.depth(latent, cam, height, width), pred.rgb(latent, cam, height, width)


def loss_mean(rows: list[dict], key: str = "loss", last: int = 50) -> float:
    vals = [r[key] for r in rows[-last:]]
    return float(np.mean(vals))


__all__ = [
    "EVAL_PROTOCOLS", "ConfigMismatch", "Encoded", "ModelPredictor", "NumericFailure", "TrainResult",
    "Trainer", "augment_frames", "evaluate_fixed", "evaluate_novel_views", "evaluate_protocol",
    "load_model", "loss_mean", "project_predictions", "query_view", "substream",
]

"""Run configuration: sectioned ``key = value`` files with strict key checking."""
from __future__ import annotations

import configparser
import dataclasses
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .augment import AugmentConfig
from .embeddings import EmbeddingConfig, ImageEncoderConfig
from .model import ModelConfig, config_digest
from .objective import LossWeights
from .scenedata import DatasetSpec, SceneSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    mode: str = "video"
    eval_every: int = 250
    eval_split: str = "test"
    queries_per_view: int = 768
    virtual_queries: int = 768
    supervise_context: bool = True
    dtype: str = "float64"
    # fixed mode: always encode these frames of this scene
    scene: str = ""
    frames: tuple[int, ...] = ()
    heldout: tuple[int, ...] = ()

    def __post_init__(self):
        if self.mode not in ("stereo", "video", "fixed"):
            raise ConfigError(f"unknown training mode {self.mode!r}")
        if self.steps < 0 or self.eval_every < 0:
            raise ConfigError("steps and eval_every must be non-negative")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"unsupported dtype {self.dtype!r}")
        if self.mode == "fixed" and not self.frames:
            raise ConfigError("fixed mode needs a frame list")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    dataset: str = ""
    out: str = "runs/default"
    model: ModelConfig = field(default_factory=ModelConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def digest(self) -> str:
        return config_digest(self.to_json()).hex()

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)


# section name -> (dataclass, attribute path on RunConfig)
_SECTIONS = {
    "run": None,
    "model": ModelConfig,
    "image": ImageEncoderConfig,
    "embedding": EmbeddingConfig,
    "augment": AugmentConfig,
    "loss": LossWeights,
    "optim": OptimConfig,
    "train": TrainConfig,
}
_RUN_KEYS = {"seed": int, "dataset": str, "out": str}


def _parse_value(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        parts = [p for p in raw.replace(",", " ").split() if p]
        kind = float if any(isinstance(x, float) for x in default) else int
        return tuple(kind(p) for p in parts)
    return raw


def _apply(cls, base, items: dict[str, str], section: str):
    known = {f.name: f for f in fields(cls) if not dataclasses.is_dataclass(getattr(base, f.name))}
    updates = {}
    for key, raw in items.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{section}]")
        try:
            updates[key] = _parse_value(raw, getattr(base, key))
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None
    try:
        return dataclasses.replace(base, **updates)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def _read_sections(text: str, allowed) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for section in parser.sections():
        if section not in allowed:
            raise ConfigError(f"unknown section [{section}]")
    return {s: dict(parser.items(s)) for s in parser.sections()}


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    items = _read_sections(text, _SECTIONS)
    run = dict(items.get("run", {}))
    for key in run:
        if key not in _RUN_KEYS:
            raise ConfigError(f"unknown key {key!r} in [run]")
    try:
        run_updates = {k: _RUN_KEYS[k](v.strip()) for k, v in run.items()}
    except ValueError as exc:
        raise ConfigError(f"[run] {exc}") from None
    model = cfg.model
    image = _apply(ImageEncoderConfig, model.image, items.get("image", {}), "image")
    embedding = _apply(EmbeddingConfig, model.embedding, items.get("embedding", {}), "embedding")
    model = _apply(ModelConfig, model, items.get("model", {}), "model")
    try:
        model = dataclasses.replace(model, image=image, embedding=embedding)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return dataclasses.replace(
        cfg, **run_updates, model=model,
        augment=_apply(AugmentConfig, cfg.augment, items.get("augment", {}), "augment"),
        loss=_apply(LossWeights, cfg.loss, items.get("loss", {}), "loss"),
        optim=_apply(OptimConfig, cfg.optim, items.get("optim", {}), "optim"),
        train=_apply(TrainConfig, cfg.train, items.get("train", {}), "train"),
    )


def load_config(path) -> RunConfig:
    return parse_config(_read_file(path))


def _read_file(path) -> str:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return path.read_text()


def parse_dataset_spec(text: str) -> DatasetSpec:
    """``[dataset]`` holds seed/split sizes/stride, ``[scene]`` the per-scene generator settings."""
    items = _read_sections(text, ("dataset", "scene"))
    scene_items = items.get("scene", {})
    if "seed" in scene_items:
        raise ConfigError("[scene] seed is derived from [dataset] seed")
    scene = _apply(SceneSpec, SceneSpec(), scene_items, "scene")
    spec = _apply(DatasetSpec, DatasetSpec(scene=scene), items.get("dataset", {}), "dataset")
    try:
        scene.validate()
    except ValueError as exc:
        raise ConfigError(f"[scene] {exc}") from None
    if spec.train_scenes < 0 or spec.test_scenes < 0 or spec.train_scenes + spec.test_scenes == 0:
        raise ConfigError("[dataset] need at least one scene")
    if spec.stride <= 0:
        raise ConfigError("[dataset] stride must be positive")
    return spec


def load_dataset_spec(path) -> DatasetSpec:
    return parse_dataset_spec(_read_file(path))


def _dump_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def dump_config(cfg: RunConfig) -> str:
    """Inverse of :func:`parse_config`."""
    lines = ["[run]", f"seed = {cfg.seed}", f"dataset = {cfg.dataset}", f"out = {cfg.out}", ""]
    sections = [("model", cfg.model), ("image", cfg.model.image), ("embedding", cfg.model.embedding),
                ("augment", cfg.augment), ("loss", cfg.loss), ("optim", cfg.optim),
                ("train", cfg.train)]
    for name, obj in sections:
        lines.append(f"[{name}]")
        for f in fields(obj):
            v = getattr(obj, f.name)
            if dataclasses.is_dataclass(v):
                continue
            lines.append(f"{f.name} = {_dump_value(v)}")
        lines.append("")
    return "\n".join(lines)


def config_from_dict(d: dict) -> RunConfig:
    m = dict(d["model"])
    image = ImageEncoderConfig(tuple(m.pop("image")["channels"]))
    embedding = EmbeddingConfig(**m.pop("embedding"))
    train = dict(d["train"])
    for key in ("frames", "heldout"):
        train[key] = tuple(train.get(key, ()))
    return RunConfig(
        seed=d["seed"], dataset=d["dataset"], out=d["out"],
        model=ModelConfig(image=image, embedding=embedding, **m),
        augment=AugmentConfig(**d["augment"]), loss=LossWeights(**d["loss"]),
        optim=OptimConfig(**d["optim"]), train=TrainConfig(**train),
    )


def config_from_json(text: str) -> RunConfig:
    return config_from_dict(json.loads(text))

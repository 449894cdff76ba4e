"""Random cameras, frames and small configs shared by the test modules."""
import dataclasses

import numpy as np

from depthfield.config import RunConfig, TrainConfig
from depthfield.embeddings import EmbeddingConfig, ImageEncoderConfig
from depthfield.geometry import Camera, PosedFrame, euler_to_rotation, make_intrinsics, make_pose
from depthfield.model import ModelConfig
from depthfield.scenedata import DatasetSpec, SceneSpec


def random_rotation(rng):
    q = rng.normal(size=4)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def random_pose(rng, scale=2.0):
    return make_pose(random_rotation(rng), rng.normal(size=3) * scale)


def random_camera(rng, width=64, height=48):
    f = rng.uniform(30, 90)
    K = make_intrinsics(f * rng.uniform(0.9, 1.1), f, width / 2 + rng.normal(), height / 2 + rng.normal())
    return Camera(K, random_pose(rng))


def small_pose(rng, sigma=0.1):
    return make_pose(euler_to_rotation(*rng.normal(size=3) * sigma), rng.normal(size=3) * sigma)


def random_frame(rng, height=16, width=16, index=0):
    rgb = rng.uniform(0, 1, size=(height, width, 3))
    depth = rng.uniform(1.0, 4.0, size=(height, width))
    f = 0.9 * width
    cam = Camera(make_intrinsics(f, f, (width - 1) / 2, (height - 1) / 2), small_pose(rng))
    return PosedFrame(rgb, depth, cam, index)


def tiny_model_config(**kw):
    base = dict(n_latents=8, latent_dim=16, blocks=1, heads=2, head_dim=4, mlp_ratio=1,
                image=ImageEncoderConfig((4, 4)), embedding=EmbeddingConfig(K_o=2, K_r=2))
    base.update(kw)
    return ModelConfig(**base)


TINY_SPEC = DatasetSpec(seed=5, train_scenes=2, test_scenes=1,
                        scene=SceneSpec(height=16, width=24, frames=20))


def tiny_run_config(dataset="", out="", **train):
    base = dict(steps=5, eval_every=0, queries_per_view=48, virtual_queries=48)
    base.update(train)
    return RunConfig(dataset=str(dataset), out=str(out), model=tiny_model_config(),
                     train=TrainConfig(**base))


def with_augment(cfg, **kw):
    return cfg.replace(augment=dataclasses.replace(cfg.augment, **kw))

import numpy as np
import pytest
from fastapi.testclient import TestClient

from depthfield import pipeline
from depthfield.api import app
from depthfield.config import dump_config
from depthfield.scenedata import read_depth, write_pose
from helpers import tiny_run_config


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


@pytest.fixture(scope="module")
def trained(tmp_path_factory, tiny_dataset_dir):
    root = tmp_path_factory.mktemp("api")
    cfg = root / "run.ini"
    cfg.write_text(dump_config(tiny_run_config(tiny_dataset_dir, root / "run", steps=2,
                                               eval_every=2)))
    return root, cfg


def test_health(client):
    assert client.get("/health").json() == {"status": "ok"}


def test_generate(client, tmp_path):
    spec = tmp_path / "spec.ini"
    spec.write_text("[dataset]\ntrain_scenes = 1\ntest_scenes = 0\n[scene]\nheight = 8\n"
                    "width = 8\nframes = 4\n")
    r = client.post("/generate", json={"out": str(tmp_path / "d"), "spec": str(spec)})
    assert r.status_code == 200
    body = r.json()
    assert body["scenes"] == 1 and body["frames"] == 4 and len(body["sha256"]) == 64


def test_generate_bad_spec_is_400(client, tmp_path):
    spec = tmp_path / "spec.ini"
    spec.write_text("[scene]\nframes = 0\n")
    r = client.post("/generate", json={"out": str(tmp_path / "d"), "spec": str(spec)})
    assert r.status_code == 400


def test_train_eval_query(client, trained, tiny_data):
    root, cfg = trained
    r = client.post("/train", json={"config": str(cfg)})
    assert r.status_code == 200
    body = r.json()
    assert body["steps"] == 2 and body["metrics"][0]["split"] == "test/video"
    ckpt = body["checkpoint"]

    r = client.post("/eval", json={"checkpoint": ckpt, "protocol": "interpolate", "samples": 1})
    assert r.status_code == 200
    rows = r.json()["rows"]
    assert {row["split"] for row in rows} == {"test/interpolate-query",
                                             "test/interpolate-projection"}
    assert all("offset" in row and "coverage" in row for row in rows)

    frames = tiny_data[1]["scene_002"]
    write_pose(root / "pose.txt", frames[2].camera.T)
    r = client.post("/query", json={"checkpoint": ckpt, "pose": str(root / "pose.txt"),
                                    "out": str(root / "q"), "frames": [0, 1]})
    assert r.status_code == 200
    q = r.json()
    assert (q["height"], q["width"]) == frames[2].hw
    assert read_depth(q["depth"]).shape == frames[2].hw


def test_validation_and_data_errors(client, tmp_path):
    r = client.post("/eval", json={"checkpoint": "x", "protocol": "sideways"})
    assert r.status_code == 422  # pydantic rejects the protocol
    r = client.post("/eval", json={"checkpoint": str(tmp_path / "none.ckpt"),
                                   "protocol": "video"})
    assert r.status_code == 422
    assert "none.ckpt" in r.json()["detail"]
    r = client.post("/query", json={"checkpoint": "x", "pose": "p", "out": "o", "frames": []})
    assert r.status_code == 422


def test_numeric_failure_is_500(client, trained, monkeypatch):
    _, cfg = trained
    real = pipeline.adam_step

    def poisoned(params, state, *args):
        real(params, state, *args)
        for p in params.values():
            p.data[...] = np.nan

    monkeypatch.setattr(pipeline, "adam_step", poisoned)
    r = client.post("/train", json={"config": str(cfg)})
    assert r.status_code == 500
    assert "step 2" in r.json()["detail"]

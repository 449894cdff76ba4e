"""HTTP front end over :mod:`depthfield.service`.

Requests run synchronously in the worker; training is long-running, so
deployments that expose ``/train`` should run with a generous timeout.
"""
from __future__ import annotations

import math
from typing import Literal, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import service
from .pipeline import EVAL_PROTOCOLS

# exit code -> HTTP status
_STATUS = {1: 400, 2: 422, 3: 500}


class GenerateRequest(BaseModel):
    out: str
    spec: Optional[str] = None
    seed: Optional[int] = None


class GenerateResponse(BaseModel):
    out: str
    scenes: int
    train: int
    test: int
    frames: int
    bytes: int
    sha256: str


class TrainRequest(BaseModel):
    config: Optional[str] = None
    seed: Optional[int] = None
    out: Optional[str] = None
    dataset: Optional[str] = None


class MetricRow(BaseModel, extra="allow"):
    split: str
    step: int
    AbsRel: Optional[float] = None
    SqRel: Optional[float] = None
    RMSE: Optional[float] = None
    d1: Optional[float] = None
    d2: Optional[float] = None
    d3: Optional[float] = None


class TrainResponse(BaseModel):
    out: str
    steps: int
    final_loss: Optional[float]
    checkpoint: str
    digest: str
    metrics: list[MetricRow] = Field(default_factory=list)


class EvalRequest(BaseModel):
    checkpoint: str
    protocol: Literal[EVAL_PROTOCOLS + ("fixed",)]  # type: ignore[valid-type]
    dataset: Optional[str] = None
    out: Optional[str] = None
    config: Optional[str] = None
    split: Literal["train", "test"] = "test"
    samples: int = Field(4, ge=0)


class EvalResponse(BaseModel):
    rows: list[MetricRow]


class QueryRequest(BaseModel):
    checkpoint: str
    pose: str
    out: str
    dataset: Optional[str] = None
    scene: Optional[str] = None
    frames: list[int] = Field(default_factory=lambda: [0], min_length=1)
    intrinsics: Optional[str] = None
    height: Optional[int] = Field(None, gt=0)
    width: Optional[int] = Field(None, gt=0)


class QueryResponse(BaseModel):
    depth: str
    rgb: str
    height: int
    width: int
    depth_range: list[float]


def _clean(rows: list[dict]) -> list[dict]:
    # JSON has no NaN; uncovered projection rows report null instead
    return [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()}
            for r in rows]


def _call(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except service.ServiceError as exc:
        raise HTTPException(status_code=_STATUS[exc.exit_code], detail=str(exc)) from exc


app = FastAPI(title="depthfield")


@app.get("/health")
def health():
    return {"status": "ok"}


@app.post("/generate", response_model=GenerateResponse)
def generate(req: GenerateRequest):
    return _call(service.generate, req.out, req.spec, req.seed)


@app.post("/train", response_model=TrainResponse)
def train(req: TrainRequest):
    res = _call(service.train, req.config, req.seed, req.out, req.dataset)
    return {**res, "metrics": _clean(res["metrics"])}


@app.post("/eval", response_model=EvalResponse)
def evaluate(req: EvalRequest):
    rows = _call(service.evaluate, req.checkpoint, req.protocol, req.dataset, req.out,
                 req.config, req.split, req.samples)
    return {"rows": _clean(rows)}


@app.post("/query", response_model=QueryResponse)
def query(req: QueryRequest):
    return _call(service.query, req.checkpoint, req.pose, req.out, req.dataset, req.scene,
                 tuple(req.frames), req.intrinsics, req.height, req.width)

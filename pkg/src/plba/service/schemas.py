"""Request/response models for the HTTP service."""

from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, Field

FeatureMode = Literal["points", "lines", "points+lines"]


class SimulateRequest(BaseModel):
    frames: int = Field(default=100, ge=2)
    points: int = Field(default=200, ge=0)
    noise_sigma: float = Field(default=1.0, ge=0.0)
    seed: int = 0


class SolveRequest(BaseModel):
    """Three mutually exclusive ways to run the optimizer.

    With ``graph`` set, the snapshot is optimized as-is.  With ``runs`` set,
    the loop-free Monte-Carlo odometry experiment executes with per-run
    seeds ``seed + run``.  Otherwise a single simulated sequence is solved
    as one joint bundle adjustment.
    """

    graph: str | None = None
    runs: int | None = Field(default=None, ge=1)
    frames: int = Field(default=100, ge=2)
    points: int = Field(default=200, ge=0)
    noise_sigma: float = Field(default=1.0, ge=0.0)
    seed: int = 0
    feature_mode: FeatureMode | Literal["all"] = "points+lines"
    init_mode: Literal["ground_truth", "perturbed", "odometry"] = "perturbed"
    pose_sigma: float = Field(default=0.05, ge=0.0)
    max_iters: int = Field(default=100, ge=1)


class CheckJacobiansRequest(BaseModel):
    trials: int = Field(default=1000, ge=0)
    tolerance: float = Field(default=1e-5, gt=0.0)
    step: float = Field(default=1e-6, gt=0.0)
    seed: int = 0


class EvaluateRequest(BaseModel):
    est: str
    gt: str
    delta: int = Field(default=1, ge=1)
    align: bool = False


class ExportRequest(BaseModel):
    graph: str
    format: Literal["both", "ply", "csv"] = "both"


class FilesResponse(BaseModel):
    """Generated artifacts keyed by file name, plus a machine-readable digest."""

    files: dict[str, str]
    summary: dict[str, Any]

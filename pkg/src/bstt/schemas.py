"""Request/response models for the HTTP service."""
from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class StudyRequest(BaseModel):
    space: str
    samples: list[int] = Field(..., min_length=1)
    trials: int = 20
    seed: int = 0
    test_size: int = 1000
    options: dict[str, Any] = Field(default_factory=dict)
    control_penalty: float = 1.0
    dictionary: Optional[str] = None
    record_timing: bool = False
    dump_dir: Optional[str] = None


class StudyResponse(BaseModel):
    problem: str
    space: str
    dof: int
    records: list[dict[str, Any]]
    summary: list[dict[str, Any]]
    metadata: dict[str, Any] = Field(default_factory=dict)


class DofRequest(BaseModel):
    spaces: list[str] = Field(..., min_length=1)


class DofRow(BaseModel):
    space: str
    dof: int
    reference: Optional[int] = None
    note: Optional[str] = None


class DofResponse(BaseModel):
    rows: list[DofRow]


class BoundsRequest(BaseModel):
    d: int = Field(..., ge=1)
    g: int = Field(..., ge=0)
    rho_max: Optional[int] = Field(None, ge=1)
    k_loc: Optional[int] = Field(None, ge=0)


class SpaceDescribe(BaseModel):
    space: str


class SpaceInfo(BaseModel):
    space: str
    family: str
    kind: str
    d: int
    p: int
    g: Optional[int] = None
    r: Optional[int] = None
    rho: Optional[int] = None
    aug: bool = False
    dof: int
    dimension: Optional[int] = None


class FitRequest(BaseModel):
    space: str
    points: list[list[float]]
    targets: list[float]
    test_points: Optional[list[list[float]]] = None
    test_targets: Optional[list[float]] = None
    dictionary: str = "legendre"
    options: dict[str, Any] = Field(default_factory=dict)


class FitResponse(BaseModel):
    space: str
    dof: int
    report: dict[str, Any]
    model: dict[str, Any]

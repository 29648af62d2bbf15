"""HTTP service exposing studies, fits and structure tables.

Run with ``bstt serve`` or ``uvicorn bstt.service:app``.
"""
from __future__ import annotations

import logging

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from . import __version__
from . import block_sparse as bsp
from . import experiments as ex
from . import poly_spaces as ps
from .regression import FitOptions, LinearModel, SampleSet, fit_space
from .schemas import (BoundsRequest, DofRequest, DofResponse, DofRow, FitRequest, FitResponse, SpaceDescribe,
                      SpaceInfo, StudyRequest, StudyResponse)
from .tt import TensorTrain

log = logging.getLogger(__name__)

app = FastAPI(title="bstt", version=__version__)


@app.exception_handler(ex.ConfigError)
async def _config_error(request: Request, exc: ex.ConfigError):
    return JSONResponse(status_code=400, content={"detail": str(exc)})


def _space(text: str) -> ps.SpaceDescriptor:
    try:
        return ps.parse_space(text)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e)) from None


def model_to_json(model) -> dict:
    """JSON form of any model returned by ``fit_space``."""
    if isinstance(model, list):
        return {"type": "sum", "parts": [m.to_json() for m in model]}
    if isinstance(model, bsp.AugmentedBlockSparseTT):
        return {"type": "augmented", **model.to_json()}
    if isinstance(model, bsp.BlockSparseTT):
        return {"type": "block_sparse", **model.to_json()}
    if isinstance(model, TensorTrain):
        return {"type": "tt", **model.to_json()}
    if isinstance(model, LinearModel):
        return {"type": "linear", "exponents": [list(e) for e in model.exponents],
                "coef": np.asarray(model.coef).tolist()}
    raise TypeError(f"cannot serialize {type(model).__name__}")


def _finite(obj):
    """Replace non-finite floats (not representable in JSON) by ``None``."""
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/dof", response_model=DofResponse)
def dof(req: DofRequest):
    spaces = [_space(s) for s in req.spaces]
    return DofResponse(rows=[DofRow(**row) for row in bsp.dof_report(spaces)])


@app.post("/bounds")
def bounds(req: BoundsRequest):
    try:
        return bsp.bounds_table(req.d, req.g, req.rho_max, req.k_loc)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e)) from None


@app.post("/spaces/describe", response_model=SpaceInfo)
def describe(req: SpaceDescribe):
    s = _space(req.space)
    try:
        dim = ps.space_dimension(s)
    except ps.UnsupportedSpaceError:
        dim = None
    return SpaceInfo(space=ps.format_space(s), family=s.family, kind=s.kind, d=s.d, p=s.p, g=s.g, r=s.r,
                     rho=s.rho, aug=s.aug, dof=bsp.dof_count(s), dimension=dim)


def _config(problem: str, req: StudyRequest) -> ex.ExperimentConfig:
    return ex.ExperimentConfig(problem=problem, **req.model_dump())


@app.post("/studies/riccati", response_model=StudyResponse)
def riccati(req: StudyRequest):
    return StudyResponse(**ex.run_riccati_study(_config("riccati", req)).to_json())


@app.post("/studies/gaussian", response_model=StudyResponse)
def gaussian(req: StudyRequest):
    return StudyResponse(**ex.run_gaussian_study(_config("gaussian", req)).to_json())


@app.post("/fit", response_model=FitResponse)
def fit(req: FitRequest):
    s = _space(req.space)
    try:
        options = FitOptions.from_json(req.options)
        dictionary = ps.Dictionary(req.dictionary, s.p)
        train = SampleSet(np.array(req.points, dtype=float), np.array(req.targets, dtype=float), dictionary)
        test = None
        if req.test_points is not None:
            if req.test_targets is None:
                raise ValueError("test_points given without test_targets")
            test = SampleSet(np.array(req.test_points, dtype=float), np.array(req.test_targets, dtype=float),
                             dictionary)
        model, report = fit_space(s, train, options, test)
    except (ValueError, TypeError) as e:
        raise HTTPException(status_code=400, detail=str(e)) from None
    return FitResponse(space=ps.format_space(s), dof=bsp.dof_count(s), report=_finite(report.to_json()),
                       model=model_to_json(model))

"""
api.py - HTTP surface over the precoding baselines and evaluation sweeps
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, Field

from config import (
    DEFAULT_OUT_DIR,
    ErrorConfig,
    ExperimentSpec,
    ScenarioConfig,
    SweepKind,
    load_experiment_spec,
    validate_sweep_grid,
)
from harness import (
    evaluate_baselines,
    load_policies,
    sweep_error_model_1,
    sweep_error_model_2,
    sweep_user_distance,
)

logger = logging.getLogger(__name__)

VERSION = "1.0.0"
# Requests run in the worker thread; keep them interactive
MAX_REQUEST_ITERATIONS = 2000
# Checkpoint paths in requests are resolved inside this directory
CHECKPOINT_DIR = Path(DEFAULT_OUT_DIR)

app = FastAPI(
    title="Satellite Precoding API",
    description="Sum-rate evaluation of MMSE, OMA and learned SAC precoders for cooperative LEO downlinks",
    version=VERSION,
)

app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_methods=["*"],
    allow_headers=["*"],
)


class BaselineRequest(BaseModel):
    scenario: Optional[ScenarioConfig] = None
    error: ErrorConfig = Field(default_factory=ErrorConfig)
    iterations: int = Field(default=100, ge=1, le=MAX_REQUEST_ITERATIONS)
    seed: Optional[int] = None


class SweepRequest(BaseModel):
    grid: Optional[list[float]] = None
    checkpoints: dict[str, str] = Field(default_factory=dict)
    iterations: int = Field(default=100, ge=1, le=MAX_REQUEST_ITERATIONS)
    seed: Optional[int] = None
    delta_epsilon: Optional[float] = Field(default=None, ge=0.0)


def _base_spec(seed: Optional[int]) -> ExperimentSpec:
    return load_experiment_spec().with_seed(seed)


def _resolve_checkpoint(path: str) -> Path:
    root = CHECKPOINT_DIR.resolve()
    candidate = (root / path).resolve()
    if not candidate.is_relative_to(root):
        raise HTTPException(status_code=400, detail=f"checkpoint {path!r} is outside the checkpoint directory")
    return candidate


@app.get("/")
async def root():
    return {
        "service": "Satellite Precoding API",
        "version": VERSION,
        "status": "active",
        "endpoints": {
            "health": "GET /health",
            "defaults": "GET /api/config/defaults",
            "baselines": "POST /api/baselines/evaluate",
            "sweeps": "POST /api/sweeps/{kind}",
        },
    }


@app.get("/health")
async def health():
    return {"status": "healthy"}


@app.get("/api/config/defaults")
async def config_defaults():
    return load_experiment_spec().model_dump(mode="json")


@app.post("/api/baselines/evaluate")
def baselines(request: BaselineRequest):
    spec = _base_spec(request.seed)
    scenario = request.scenario or spec.scenario
    results = evaluate_baselines(scenario, request.error, request.iterations, spec.seed)
    return {
        "error": request.error.model_dump(mode="json"),
        "iterations": request.iterations,
        "seed": spec.seed,
        "precoders": results,
    }


@app.post("/api/sweeps/{kind}")
def sweep(kind: str, request: SweepRequest):
    try:
        sweep_kind = SweepKind(kind)
    except ValueError:
        raise HTTPException(
            status_code=400,
            detail=f"kind must be one of {[k.value for k in SweepKind]}",
        )

    spec = _base_spec(request.seed).with_iterations(request.iterations)
    try:
        grid = validate_sweep_grid(sweep_kind, request.grid) if request.grid is not None else spec.sweeps.grid_for(sweep_kind)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))

    checkpoints = {label: _resolve_checkpoint(path) for label, path in request.checkpoints.items()}
    missing = [name for name, path in zip(request.checkpoints.values(), checkpoints.values()) if not path.is_file()]
    if missing:
        raise HTTPException(status_code=404, detail=f"checkpoint not found: {', '.join(missing)}")
    try:
        policies = load_policies(checkpoints)
    except ValueError as e:
        raise HTTPException(status_code=400, detail=str(e))

    logger.info("Sweep %s over %d points, %d learned precoders", sweep_kind.value, len(grid), len(policies))
    if sweep_kind is SweepKind.DISTANCE:
        result = sweep_user_distance(policies, grid, spec)
    elif sweep_kind is SweepKind.ERROR1:
        result = sweep_error_model_1(policies, grid, spec)
    else:
        result = sweep_error_model_2(policies, grid, spec, request.delta_epsilon)
    return result.to_dict()


if __name__ == "__main__":
    import uvicorn
    uvicorn.run(app, host="0.0.0.0", port=8000)

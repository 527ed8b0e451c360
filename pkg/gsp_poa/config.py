"""
Environment settings and the JSON schema of an experiment.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Any, Literal

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .bayesian_sim import DistributionSpec
from .byzantine import PopulationSpec
from .equilibria import DEFAULT_ENUMERATION_BUDGET, DEFAULT_GRID_POINTS, AllocationFilter, Sampler

load_dotenv()

OUT_DIR = os.getenv("GSP_POA_OUT_DIR", "reports")
THREADS = int(os.getenv("GSP_POA_THREADS", "1"))
LOG_LEVEL = os.getenv("GSP_POA_LOG_LEVEL", "WARNING")

MAX_GRID_POINTS = 4096
MAX_ROUNDS = 10**7
MAX_SAMPLES = 10**7
MAX_RESOLUTION = 10**4

Kind = Literal["simulate", "check-ne", "enumerate", "learn", "bpoa", "byzantine", "poa3", "cyclic", "tight-instance"]

# fields that may not influence any result byte
RUNTIME_FIELDS = {"out_dir", "threads"}

_REQUIRED: dict[str, tuple[str, ...]] = {
    "simulate": ("values", "ctrs", "bids"),
    "check-ne": ("values", "ctrs", "bids"),
    "bpoa": ("distributions", "ctrs"),
    "byzantine": ("values", "ctrs", "population"),
}


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Kind
    seed: int = Field(0, ge=0, lt=2**64)
    values: tuple[float, ...] | None = None
    ctrs: tuple[float, ...] | None = None
    bids: tuple[float, ...] | None = None
    distributions: tuple[DistributionSpec, ...] | None = None
    population: PopulationSpec | None = None
    grid_points: int = Field(DEFAULT_GRID_POINTS, ge=1, le=MAX_GRID_POINTS)
    rounds: int = Field(200_000, ge=1, le=MAX_ROUNDS)
    burn_in: int = Field(0, ge=0)
    samples: int = Field(100_000, ge=1, le=MAX_SAMPLES)
    iterations: int = Field(10, ge=0)
    instances: int = Field(1, ge=1)
    n_slots: int | None = Field(None, ge=1)
    sampler: Sampler = "boundary"
    allocation: AllocationFilter = "any"
    resolution: int = Field(2000, ge=2, le=MAX_RESOLUTION)
    restarts: int = Field(32, ge=1)
    case: Literal["i", "ii"] = "i"
    epsilon: float | None = Field(None, ge=0)
    budget: int = Field(DEFAULT_ENUMERATION_BUDGET, ge=1)
    strategy: Literal["truthful", "search"] = "truthful"
    max_slots: int = Field(8, ge=3)
    out_dir: str = OUT_DIR
    threads: int = Field(THREADS, ge=1)

    @field_validator("values", "ctrs", "bids", "distributions")
    @classmethod
    def _non_empty(cls, xs: tuple | None) -> tuple | None:
        if xs is not None and len(xs) == 0:
            raise ValueError("agent and slot lists must not be empty")
        return xs

    @field_validator("ctrs")
    @classmethod
    def _nonincreasing(cls, ctrs: tuple[float, ...] | None) -> tuple[float, ...] | None:
        if ctrs is not None and any(a < b for a, b in zip(ctrs, ctrs[1:])):
            raise ValueError("click-through rates must be nonincreasing")
        return ctrs

    @model_validator(mode="after")
    def _kind_fields(self) -> ExperimentConfig:
        missing = [name for name in _REQUIRED.get(self.kind, ()) if getattr(self, name) is None]
        if self.kind in ("enumerate", "learn") and self.n_slots is None:
            missing += [name for name in ("values", "ctrs") if getattr(self, name) is None]
        if missing:
            raise ValueError(f"{self.kind} needs {', '.join(missing)}")
        if self.burn_in >= self.rounds:
            raise ValueError(f"burn_in {self.burn_in} leaves no rounds out of {self.rounds}")
        return self

    def results_json(self) -> str:
        return self.model_dump_json(exclude=RUNTIME_FIELDS)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.results_json().encode("utf-8")).hexdigest()


def load_config(path: str | Path | None, overrides: dict[str, Any]) -> ExperimentConfig:
    """Config file (if any) with the non-None overrides applied on top."""
    data: dict[str, Any] = {}
    if path is not None:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.model_validate(data)

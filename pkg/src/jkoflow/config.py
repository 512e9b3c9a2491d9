"""Experiment configuration files (JSON), validated with pydantic."""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .cost import CostModel, parse_cost
from .errors import ConfigError
from .geometry import Density, Grid
from .jko import SOLVERS, JkoConfig
from .profiles import parse_profile

_CHECK = re.compile(r"^(fisher:[0-9.]+|lipschitz|modulus|five_gradients|compare_pde|comparison_principle|homogeneity:[0-9.eE+-]+)$")


class GridSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    a: float = 0.0
    b: float = 1.0
    n: int = Field(gt=0)

    @model_validator(mode="after")
    def _ordered(self):
        if not self.b > self.a:
            raise ValueError("b must exceed a")
        return self


class JkoSection(BaseModel):
    model_config = ConfigDict(extra="forbid")
    h: float = Field(gt=0)
    steps: int = Field(ge=1)
    solver: Literal[SOLVERS] = "DirectMirror"  # type: ignore[valid-type]
    eta: Optional[float] = Field(default=None, gt=0)
    tol: float = Field(default=1e-8, gt=0)
    max_iter: int = Field(default=500, ge=1)


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    grid: GridSection
    cost: str
    initial: str = "uniform"
    jko: JkoSection
    checks: List[str] = Field(default_factory=list)
    #: L1 tolerance of the compare_pde check
    compare_tol: float = Field(default=5e-2, gt=0)

    @field_validator("cost")
    @classmethod
    def _cost(cls, v: str) -> str:
        parse_cost(v)
        return v

    @field_validator("checks")
    @classmethod
    def _checks(cls, v: list) -> list:
        for item in v:
            if not _CHECK.match(item.strip()):
                raise ValueError(f"unknown check {item!r}")
        return [item.strip() for item in v]

    # resolved objects -------------------------------------------------------

    def make_grid(self) -> Grid:
        return Grid(self.grid.a, self.grid.b, self.grid.n)

    def make_cost(self) -> CostModel:
        return parse_cost(self.cost)

    def make_jko(self) -> JkoConfig:
        j = self.jko
        cfg = JkoConfig(h=j.h, eta=j.eta, tol_inner=j.tol, max_iter=j.max_iter, solver=j.solver)
        cfg.check_grid(self.make_grid())
        return cfg


def load_config(path) -> tuple[ExperimentConfig, Density]:
    """Parse and validate a config file, returning it with the resolved initial density.

    Every problem is reported as :class:`ConfigError` with the offending field named.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} does not exist") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        parts = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            parts.append(f"{loc}: {err['msg']}")
        raise ConfigError("; ".join(parts)) from exc
    try:
        cfg.make_jko()
    except ValueError as exc:
        raise ConfigError(f"jko: {exc}") from exc
    try:
        rho0 = parse_profile(cfg.initial, cfg.make_grid(), base_dir=path.parent)
    except (ValueError, FileNotFoundError, OSError) as exc:
        raise ConfigError(f"initial: {exc}") from exc
    if rho0.values.min() <= 0:
        raise ConfigError("initial: the profile must be strictly positive")
    return cfg, rho0

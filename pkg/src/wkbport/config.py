"""Run configuration: a single JSON document validated with pydantic."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError
from .model import SeparableModel, model_from_config
from .utility import UtilitySpec
from .wkb import Numerics

__all__ = ["RunConfig", "load_config", "parse_config"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class ModelSection(_Strict):
    kind: Literal["lognormal", "ou"]
    mu: Optional[list[float]] = None
    sigma: list[float]
    lambda_: Optional[list[float]] = Field(default=None, alias="lambda")
    mu_bar: Optional[list[float]] = None
    rho: Union[float, list[list[float]], None] = None

    @model_validator(mode="after")
    def _fields_for_kind(self):
        need = ["mu"] if self.kind == "lognormal" else ["lambda_", "mu_bar"]
        for name in need:
            vec = getattr(self, name)
            if vec is None:
                raise ValueError(f"{self.kind} model needs '{name.rstrip('_')}'")
            if len(vec) != len(self.sigma):
                raise ValueError(f"'{name.rstrip('_')}' has length {len(vec)}, sigma has {len(self.sigma)}")
        if isinstance(self.rho, list):
            n = len(self.sigma)
            if len(self.rho) != n or any(len(r) != n for r in self.rho):
                raise ValueError(f"rho must be {n}x{n}")
        return self

    @property
    def n(self) -> int:
        return len(self.sigma)

    def build(self) -> SeparableModel:
        return model_from_config(self.model_dump(by_alias=True, exclude_none=True))


class UtilitySection(_Strict):
    kind: Literal["hara", "crra", "cara", "log"]
    gamma: Optional[float] = None
    a: Optional[float] = None
    b: Optional[float] = None

    def build(self) -> UtilitySpec:
        return UtilitySpec.from_config(self.model_dump(exclude_none=True))


class GridSpec(_Strict):
    lo: list[float]
    hi: list[float]
    count: Union[int, list[int]]

    def points(self) -> np.ndarray:
        n = len(self.lo)
        counts = [self.count] * n if isinstance(self.count, int) else self.count
        axes = [np.linspace(a, b, c) for a, b, c in zip(self.lo, self.hi, counts)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def axes(self) -> list[list[float]]:
        n = len(self.lo)
        counts = [self.count] * n if isinstance(self.count, int) else self.count
        return [np.linspace(a, b, c).tolist() for a, b, c in zip(self.lo, self.hi, counts)]

    @model_validator(mode="after")
    def _shape(self):
        if len(self.hi) != len(self.lo):
            raise ValueError("grid lo and hi lengths differ")
        counts = [self.count] if isinstance(self.count, int) else self.count
        if any(c < 1 for c in counts):
            raise ValueError("grid counts must be >= 1")
        if not isinstance(self.count, int) and len(self.count) != len(self.lo):
            raise ValueError("grid count length differs from lo")
        return self


class NumericsSection(_Strict):
    N: int = Field(default=64, ge=1)
    eps: float = Field(default=1e-13, gt=0)
    inner_tol: float = Field(default=1e-12, gt=0)
    max_inner: int = Field(default=20, ge=1)
    max_newton: int = Field(default=100, ge=1)
    refine: bool = True
    s1_enabled: bool = True
    grad_p_mode: Literal["bump", "trajectory"] = "bump"
    bump: float = Field(default=1e-4, gt=0)

    def build(self) -> Numerics:
        return Numerics(**self.model_dump())


class PolicySection(_Strict):
    wealth: float = 1.0


class BacktestSection(_Strict):
    x0: list[float]
    w0: float = 1.0
    paths: int = Field(default=100_000, ge=1)
    steps: int = Field(default=50, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    scheme: Literal["euler_maruyama"] = "euler_maruyama"
    bump: float = 0.2
    mode: Literal["surface", "exact"] = "surface"
    surface_times: int = Field(default=3, ge=1)
    surface_grid: Optional[GridSpec] = None


class TrajectorySection(_Strict):
    y: list[float]
    t: Optional[float] = None


class OutputSection(_Strict):
    dir: str = "out"
    formats: list[Literal["csv", "json"]] = ["csv", "json"]


class RunConfig(_Strict):
    model: ModelSection
    utility: UtilitySection
    horizon: float = Field(gt=0)
    query_times: list[float] = Field(min_length=1)
    query_points: Union[list[list[float]], GridSpec]
    numerics: NumericsSection = NumericsSection()
    policy: PolicySection = PolicySection()
    backtest: Optional[BacktestSection] = None
    trajectory: Optional[TrajectorySection] = None
    output: OutputSection = OutputSection()

    @field_validator("query_points")
    @classmethod
    def _nonempty(cls, v):
        if isinstance(v, list) and not v:
            raise ValueError("query_points is empty")
        return v

    @model_validator(mode="after")
    def _consistent(self):
        n = self.model.n
        pts = self.points()
        if pts.shape[1] != n:
            raise ValueError(f"query points have dimension {pts.shape[1]}, the model has {n} assets")
        for t in self.query_times:
            if not 0 <= t <= self.horizon:
                raise ValueError(f"query time {t} outside [0, {self.horizon}]")
        if self.trajectory is not None and len(self.trajectory.y) != n:
            raise ValueError("trajectory.y length differs from the number of assets")
        if self.backtest is not None:
            if len(self.backtest.x0) != n:
                raise ValueError("backtest.x0 length differs from the number of assets")
            if self.backtest.surface_grid is not None and len(self.backtest.surface_grid.lo) != n:
                raise ValueError("backtest.surface_grid dimension differs from the number of assets")
        return self

    def points(self) -> np.ndarray:
        if isinstance(self.query_points, GridSpec):
            return self.query_points.points()
        lens = {len(p) for p in self.query_points}
        if len(lens) != 1:
            raise ValueError("query points have inconsistent lengths")
        return np.array(self.query_points, dtype=float)


def parse_config(doc: dict) -> RunConfig:
    """Validate a config mapping; a run summary (with a ``config`` key) is accepted too."""
    if isinstance(doc, dict) and "config" in doc and "model" not in doc:
        doc = doc["config"]
    try:
        cfg = RunConfig.model_validate(doc)
        # build once so parameter errors (e.g. a non-PD rho) surface as config errors
        cfg.model.build()
        cfg.utility.build()
        cfg.numerics.build()
    except ValidationError as exc:
        raise ConfigError(f"config schema error:\n{exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config error: {exc}") from exc
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(doc)

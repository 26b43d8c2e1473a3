"""YAML run configuration, validated before any computation.

Top-level keys: ``model``, ``grids``, ``solver``, ``teb``, ``scenario``, ``output``.
Every field has a default except ``model.name``; see README for the full schema.
"""
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
import yaml

from .errors import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSpec(_Strict):
    name: str
    params: Dict[str, float] = Field(default_factory=dict)


class GridSpec(_Strict):
    lo: List[float]
    hi: List[float]
    n: List[int]
    periodic: Optional[List[bool]] = None

    @model_validator(mode="after")
    def _check(self):
        if not (len(self.lo) == len(self.hi) == len(self.n)):
            raise ValueError("lo, hi and n must have the same length")
        if self.periodic is not None and len(self.periodic) != len(self.n):
            raise ValueError("periodic must match the grid dimension")
        if any(k < 3 for k in self.n):
            raise ValueError("every dimension needs at least 3 nodes")
        if any(b <= a for a, b in zip(self.lo, self.hi)):
            raise ValueError("need lo < hi in every dimension")
        return self


class SolverSpec(_Strict):
    horizon: float = Field(10.0, gt=0)
    cfl: float = Field(0.5, gt=0, le=1)
    tol: float = Field(1e-3, gt=0)
    snapshots: int = Field(11, ge=2)
    max_steps: int = Field(1_000_000, ge=1)
    untrusted_cells: int = Field(2, ge=0)
    dissipation: Literal["local", "global", "corner"] = "local"
    scheme: Literal["auto", "lf", "godunov"] = "auto"
    stop_on_convergence: bool = True


class TEBSpec(_Strict):
    eps: Optional[float] = Field(None, ge=0)
    calibrate: bool = False
    calibrate_steps: int = Field(2000, ge=1)
    calibrate_factor: float = Field(2.0, ge=1)


class BoxSpec(_Strict):
    lo: List[float]
    hi: List[float]

    @model_validator(mode="after")
    def _check(self):
        if len(self.lo) != len(self.hi) or any(b < a for a, b in zip(self.lo, self.hi)):
            raise ValueError("box needs matching lo <= hi")
        return self


class ObstacleSpec(_Strict):
    lo: Optional[List[float]] = None
    hi: Optional[List[float]] = None
    vertices: Optional[List[List[float]]] = None
    dims: Optional[List[int]] = None

    @model_validator(mode="after")
    def _check(self):
        if self.vertices is None and (self.lo is None or self.hi is None):
            raise ValueError("an obstacle needs lo/hi or vertices")
        return self


class SensorSpec(_Strict):
    kind: Literal["radial", "fan"] = "radial"
    radius: float = Field(gt=0)
    half_angle: float = Field(0.5235987755982988, gt=0)


class EnvironmentSpec(_Strict):
    bounds: BoxSpec
    goal: BoxSpec
    sensor: SensorSpec
    obstacles: List[ObstacleSpec] = Field(default_factory=list)
    start: Optional[List[float]] = None


class PlannerSpec(_Strict):
    kind: Literal["grid", "rrt"] = "grid"
    seed: int = 0
    step_size: float = Field(0.5, gt=0)
    max_iters: int = Field(20_000, ge=1)
    primitive_steps: int = Field(5, ge=1)
    controls_per_dim: int = Field(3, ge=2)
    resolution: Optional[float] = Field(None, gt=0)
    angle_bins: int = Field(16, ge=4)
    max_expansions: int = Field(200_000, ge=1)


class DisturbanceSpec(_Strict):
    kind: Literal["zero", "uniform", "adversarial"] = "uniform"
    seed: int = 0


class HybridSpec(_Strict):
    rule: Literal["value_fraction", "error_threshold"] = "value_fraction"
    fraction: float = Field(0.25, gt=0, le=1)
    threshold: float = Field(0.02, ge=0)
    bandwidth: float = Field(2.0, gt=0)


class ScenarioSpec(_Strict):
    environment: Union[str, EnvironmentSpec]
    start: Optional[List[float]] = None
    planner: PlannerSpec = Field(default_factory=PlannerSpec)
    disturbance: DisturbanceSpec = Field(default_factory=DisturbanceSpec)
    hybrid: HybridSpec = Field(default_factory=HybridSpec)
    dt: float = Field(0.067, gt=0)
    max_steps: int = Field(10_000, ge=1)
    time_varying: bool = True
    planner_step: Optional[float] = Field(None, ge=0)
    allow_short_sensing: bool = False
    reveal_all: bool = False


class OutputSpec(_Strict):
    dir: str = "out"
    prefix: Optional[str] = None


class RunConfig(_Strict):
    model: ModelSpec
    grids: Dict[str, GridSpec] = Field(default_factory=dict)
    solver: SolverSpec = Field(default_factory=SolverSpec)
    teb: TEBSpec = Field(default_factory=TEBSpec)
    scenario: Optional[ScenarioSpec] = None
    output: OutputSpec = Field(default_factory=OutputSpec)

    @field_validator("model")
    @classmethod
    def _known(cls, v):
        from .relsys import model_names

        if v.name not in model_names():
            raise ValueError(f"unknown model {v.name!r}; known: {model_names()}")
        return v


def _format(exc):
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"])
        lines.append(f"{loc}: {err['msg']}")
    return "; ".join(lines)


def parse_config(data, base_dir=None):
    """Validate a mapping; relative environment paths resolve against ``base_dir``."""
    try:
        cfg = RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration: {_format(exc)}") from None
    if cfg.scenario is not None and isinstance(cfg.scenario.environment, str):
        p = Path(cfg.scenario.environment)
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        cfg.scenario.environment = load_environment_spec(p)
    return cfg


def load_config(path):
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(data, path.parent)


def load_environment_spec(path):
    try:
        data = yaml.safe_load(Path(path).read_text())
        return EnvironmentSpec.model_validate(data)
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read environment {path}: {exc}") from None
    except ValidationError as exc:
        raise ConfigError(f"invalid environment {path}: {_format(exc)}") from None

"""Scenario file schema, validation and object registry.

A scenario is one TOML file with the sections `norms[]`, `bodies[]`,
`solver` and `thresholds`. Environment variables prefixed `FINSLERCAP_`
override file values; nested keys use `__`
(`FINSLERCAP_SOLVER__GRID=48`).
"""

from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Optional, Tuple, Type

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from finslercap.core.errors import ConfigError, FinslerCapError
from finslercap.core.logging_config import get_logger
from finslercap.geometry.bodies import (
    ConvexBody,
    ellipsoid,
    euclidean_ball,
    minkowski_sum,
    sampled_support,
    wulff_ball,
)
from finslercap.norms.models import (
    EllipsoidalNorm,
    EuclideanNorm,
    NormModel,
    PNorm,
    RegularizedNorm,
    SampledNorm,
)
from finslercap.pde.domain import MIN_CELLS_ACROSS
from finslercap.pde.solvers import DEFAULT_R_OUT, SolverOptions
from finslercap.schemas import Thresholds

logger = get_logger(__name__)


# =============================================================================
# Reusable Validators
# =============================================================================

VALID_FAMILIES: Tuple[str, ...] = ("euclidean", "ellipsoidal", "pnorm", "regularized", "sampled")
VALID_BODY_KINDS: Tuple[str, ...] = ("wulff_ball", "euclidean_ball", "ellipsoid", "minkowski_sum", "sampled_support")


def validate_family_value(v: str | None, allow_none: bool = False) -> str | None:
    """Validate a norm family name and normalize to lowercase.

    Raises:
        ValueError: If the family is unknown
    """
    if v is None:
        if allow_none:
            return None
        raise ValueError("family cannot be None")
    v_lower = v.lower()
    if v_lower not in VALID_FAMILIES:
        raise ValueError(f"family must be one of {VALID_FAMILIES}, got '{v}'")
    return v_lower


def validate_body_kind_value(v: str | None, allow_none: bool = False) -> str | None:
    """Validate a body kind and normalize to lowercase.

    Raises:
        ValueError: If the kind is unknown
    """
    if v is None:
        if allow_none:
            return None
        raise ValueError("kind cannot be None")
    v_lower = v.lower()
    if v_lower not in VALID_BODY_KINDS:
        raise ValueError(f"kind must be one of {VALID_BODY_KINDS}, got '{v}'")
    return v_lower


# =============================================================================
# Sections
# =============================================================================


class NormSpec(BaseModel):
    """One entry of `norms[]`."""

    name: str = Field(..., min_length=1, max_length=64)
    family: str
    dimension: int = Field(default=3, ge=2)
    matrix: Optional[list[float]] = None
    p: Optional[float] = None
    weights: Optional[list[float]] = None
    base: Optional[str] = None
    eps: Optional[float] = None
    values: Optional[list[float]] = None
    n_pol: Optional[int] = Field(default=None, ge=4)
    n_az: Optional[int] = Field(default=None, ge=8)

    @field_validator("family")
    @classmethod
    def validate_family(cls, v: str) -> str:
        return validate_family_value(v, allow_none=False)

    @model_validator(mode="after")
    def check_payload(self) -> "NormSpec":
        n = self.dimension
        if self.family == "ellipsoidal":
            if self.matrix is None or len(self.matrix) != n * n:
                raise ValueError(f"norm '{self.name}': ellipsoidal matrix needs {n * n} entries (row-major)")
        elif self.family == "pnorm":
            if self.p is None or self.p <= 1.0:
                raise ValueError(f"norm '{self.name}': pnorm needs p > 1")
            if self.weights is not None and (len(self.weights) != n or any(w <= 0.0 for w in self.weights)):
                raise ValueError(f"norm '{self.name}': pnorm weights must be {n} positive numbers")
        elif self.family == "regularized":
            if not self.base:
                raise ValueError(f"norm '{self.name}': regularized norm needs a base")
            if self.eps is not None and not (0.0 < self.eps < 1.0):
                raise ValueError(f"norm '{self.name}': eps must lie in (0, 1)")
        elif self.family == "sampled":
            if n != 3:
                raise ValueError(f"norm '{self.name}': sampled norms live on S^2 (dimension 3)")
            if self.n_pol is None or self.n_az is None:
                raise ValueError(f"norm '{self.name}': sampled norm needs n_pol and n_az")
            if self.values is None and not self.base:
                raise ValueError(f"norm '{self.name}': sampled norm needs values or a base to sample")
        return self


class BodySpec(BaseModel):
    """One entry of `bodies[]`.

    `model` names the norm H the body is examined under; it defaults to
    `norm` for Wulff balls.
    """

    name: str = Field(..., min_length=1, max_length=64)
    kind: str
    model: Optional[str] = None
    norm: Optional[str] = None
    radius: float = Field(default=1.0)
    center: Optional[list[float]] = None
    dimension: int = Field(default=3, ge=2)
    semi_axes: Optional[list[float]] = None
    summands: Optional[list[str]] = None
    weights: Optional[list[float]] = None
    values: Optional[list[float]] = None
    n_pol: Optional[int] = Field(default=None, ge=4)
    n_az: Optional[int] = Field(default=None, ge=8)

    @field_validator("kind")
    @classmethod
    def validate_kind(cls, v: str) -> str:
        return validate_body_kind_value(v, allow_none=False)

    @field_validator("radius")
    @classmethod
    def validate_radius(cls, v: float) -> float:
        if not v > 0.0:
            raise ValueError(f"radius must be positive, got {v}")
        return v

    @model_validator(mode="after")
    def check_payload(self) -> "BodySpec":
        if self.kind == "wulff_ball" and not self.norm:
            raise ValueError(f"body '{self.name}': wulff_ball needs a norm")
        if self.kind == "ellipsoid" and not self.semi_axes:
            raise ValueError(f"body '{self.name}': ellipsoid needs semi_axes")
        if self.kind == "minkowski_sum":
            if not self.summands:
                raise ValueError(f"body '{self.name}': minkowski_sum needs summands")
            if self.weights is not None and (
                len(self.weights) != len(self.summands) or any(w <= 0.0 for w in self.weights)
            ):
                raise ValueError(f"body '{self.name}': one positive weight per summand")
        if self.kind == "sampled_support" and (self.values is None or self.n_pol is None or self.n_az is None):
            raise ValueError(f"body '{self.name}': sampled_support needs values, n_pol and n_az")
        return self


class SolverSection(BaseModel):
    grid: Optional[int] = Field(default=None, ge=8)
    r_out: list[float] = Field(default_factory=lambda: list(DEFAULT_R_OUT), min_length=2)
    max_iters: Optional[int] = Field(default=None, ge=1)
    grad_tol: float = Field(default=1e-9, gt=0.0)
    energy_tol: float = Field(default=1e-12, gt=0.0)
    margin: int = Field(default=2, ge=1)
    min_cells_across: float = Field(default=MIN_CELLS_ACROSS, ge=0.0)
    seed: int = Field(default=0, ge=0)
    refine: bool = True
    diagnostics: bool = False
    n_pol: Optional[int] = Field(default=None, ge=4)
    n_az: Optional[int] = Field(default=None, ge=8)

    @field_validator("r_out")
    @classmethod
    def validate_r_out(cls, v: list[float]) -> list[float]:
        if any(r <= 0.0 for r in v) or sorted(set(v)) != list(v):
            raise ValueError(f"r_out must be strictly increasing positive radii, got {v}")
        return v

    def options(self) -> SolverOptions:
        return SolverOptions(
            max_iters=self.max_iters,
            grad_tol=self.grad_tol,
            energy_tol=self.energy_tol,
            margin=self.margin,
            min_cells_across=self.min_cells_across,
        )


class ScenarioConfig(BaseSettings):
    """Validated contents of a scenario file."""

    model_config = SettingsConfigDict(
        env_prefix="FINSLERCAP_",
        env_nested_delimiter="__",
        case_sensitive=False,
        extra="ignore",
    )

    name: str = "scenario"
    norms: list[NormSpec] = Field(..., min_length=1)
    bodies: list[BodySpec] = Field(..., min_length=1)
    solver: SolverSection = Field(default_factory=SolverSection)
    thresholds: Thresholds = Field(default_factory=Thresholds)

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: Type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> Tuple[PydanticBaseSettingsSource, ...]:
        return (init_settings, env_settings, TomlConfigSettingsSource(settings_cls))

    @model_validator(mode="after")
    def check_references(self) -> "ScenarioConfig":
        norm_names = [n.name for n in self.norms]
        body_names = [b.name for b in self.bodies]
        for kind, names in (("norm", norm_names), ("body", body_names)):
            dupes = sorted({x for x in names if names.count(x) > 1})
            if dupes:
                raise ValueError(f"duplicate {kind} names: {dupes}")
        known = set(norm_names)
        for spec in self.norms:
            if spec.base and spec.base not in known:
                raise ValueError(f"norm '{spec.name}' references unknown base '{spec.base}'")
            if spec.base == spec.name:
                raise ValueError(f"norm '{spec.name}' references itself")
        known_bodies = set(body_names)
        for spec in self.bodies:
            for ref in (spec.norm, spec.model):
                if ref and ref not in known:
                    raise ValueError(f"body '{spec.name}' references unknown norm '{ref}'")
            for ref in spec.summands or []:
                if ref not in known_bodies or ref == spec.name:
                    raise ValueError(f"body '{spec.name}' references unknown summand '{ref}'")
        return self


def load_scenario(path: str | Path) -> ScenarioConfig:
    """Read and validate a scenario file.

    Raises:
        ConfigError: missing file, TOML syntax error or schema violation
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    file_config = type(
        "FileScenarioConfig",
        (ScenarioConfig,),
        {"model_config": SettingsConfigDict(toml_file=path)},
    )
    try:
        scenario = file_config()
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: invalid TOML: {e}") from e
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}") from e
    logger.info(
        "scenario_loaded",
        path=str(path),
        norms=len(scenario.norms),
        bodies=len(scenario.bodies),
        message="Scenario file validated",
    )
    return scenario


# =============================================================================
# Registry
# =============================================================================


class ScenarioRegistry:
    """Builds and memoizes the norm and body objects a scenario declares."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        self._norm_specs = {n.name: n for n in config.norms}
        self._body_specs = {b.name: b for b in config.bodies}
        self._norms: dict[str, NormModel] = {}
        self._bodies: dict[str, ConvexBody] = {}
        self._building: set[str] = set()

    def norm(self, name: str) -> NormModel:
        if name in self._norms:
            return self._norms[name]
        spec = self._norm_specs.get(name)
        if spec is None:
            raise ConfigError(f"unknown norm '{name}'")
        if name in self._building:
            raise ConfigError(f"norm '{name}' is part of a reference cycle")
        self._building.add(name)
        try:
            model = self._build_norm(spec)
        except FinslerCapError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"norm '{name}': {e}") from e
        finally:
            self._building.discard(name)
        self._norms[name] = model
        return model

    def _build_norm(self, spec: NormSpec) -> NormModel:
        n = spec.dimension
        if spec.family == "euclidean":
            return EuclideanNorm(n, label=spec.name)
        if spec.family == "ellipsoidal":
            rows = [spec.matrix[i * n:(i + 1) * n] for i in range(n)]
            return EllipsoidalNorm(rows, label=spec.name)
        if spec.family == "pnorm":
            return PNorm(spec.p, spec.weights or [1.0] * n, label=spec.name)
        if spec.family == "regularized":
            base = self.norm(spec.base)
            return RegularizedNorm(base, 0.05 if spec.eps is None else spec.eps, label=spec.name)
        if spec.base:
            return SampledNorm.from_model(self.norm(spec.base), spec.n_pol, spec.n_az, label=spec.name)
        return SampledNorm(spec.values, spec.n_pol, spec.n_az, label=spec.name)

    def body(self, name: str) -> ConvexBody:
        if name in self._bodies:
            return self._bodies[name]
        spec = self._body_specs.get(name)
        if spec is None:
            raise ConfigError(f"unknown body '{name}'")
        if name in self._building:
            raise ConfigError(f"body '{name}' is part of a reference cycle")
        self._building.add(name)
        try:
            body = self._build_body(spec)
        except FinslerCapError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"body '{name}': {e}") from e
        finally:
            self._building.discard(name)
        self._bodies[name] = body
        return body

    def _build_body(self, spec: BodySpec) -> ConvexBody:
        if spec.kind == "wulff_ball":
            return wulff_ball(self.norm(spec.norm), spec.radius, spec.center, label=spec.name)
        if spec.kind == "euclidean_ball":
            return euclidean_ball(spec.radius, spec.center, dimension=spec.dimension, label=spec.name)
        if spec.kind == "ellipsoid":
            return ellipsoid(spec.semi_axes, center=spec.center, label=spec.name)
        if spec.kind == "minkowski_sum":
            return minkowski_sum([self.body(s) for s in spec.summands], spec.weights, label=spec.name)
        return sampled_support(spec.values, spec.n_pol, spec.n_az, center=spec.center, label=spec.name)

    def model_for(self, body_name: str) -> NormModel:
        """The norm H a body is examined under."""
        spec = self._body_specs.get(body_name)
        if spec is None:
            raise ConfigError(f"unknown body '{body_name}'")
        ref = spec.model or spec.norm
        if not ref:
            raise ConfigError(f"body '{body_name}' declares no model norm")
        return self.norm(ref)

    def norm_names(self) -> list[str]:
        return list(self._norm_specs)

    def body_names(self) -> list[str]:
        return list(self._body_specs)

    def describe(self) -> dict[str, Any]:
        return {"name": self.config.name, "norms": self.norm_names(), "bodies": self.body_names()}

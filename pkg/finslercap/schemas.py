"""Shared Pydantic report models and enums for services and the CLI."""

from __future__ import annotations

from enum import Enum
from typing import Any, Optional

from pydantic import BaseModel, Field


class Verdict(str, Enum):
    WULFF_CONSISTENT = "wulff-consistent"
    NOT_WULFF = "not-wulff"
    INCONCLUSIVE = "inconclusive"


class FluxStats(BaseModel):
    mean: float
    cv: float = Field(..., ge=0.0)
    min: float
    max: float


class Residuals(BaseModel):
    r1: float = Field(..., ge=0.0, description="|Cap_H - C P_H| / Cap_H")
    r2: float = Field(..., ge=0.0, description="|(N-2) Cap_H - C^2 N |Omega|| / Cap_H")


class Convergence(BaseModel):
    iters: int = Field(..., ge=0)
    final_grad: float


class Thresholds(BaseModel):
    """Verdict thresholds: flux cv, Minkowski slack and identity residuals."""

    tau_cv: float = Field(default=0.05, gt=0.0)
    tau_eq: float = Field(default=1e-3, gt=0.0)
    tau_id: float = Field(default=0.08, gt=0.0)


class CapacityReport(BaseModel):
    """Result of one exterior-capacity pipeline run."""

    problem: str = "capacity"
    norm: str
    body: str
    grid: int = Field(..., ge=3)
    r_out: list[float]
    cap_value: float = Field(..., gt=0.0, description="int H(Du)^2 of the largest truncated solve")
    cap_extrapolated: float = Field(..., gt=0.0)
    cap_truncated: list[float] = Field(default_factory=list)
    cap_closed_form: Optional[float] = None
    flux: FluxStats
    C_formula: float
    residuals: Residuals
    verdict: Verdict
    convergence: Convergence
    minkowski_slack: float
    cv_history: list[float] = Field(default_factory=list)
    cells_across: float
    decay_brackets: Optional[dict[str, Any]] = None
    gamma: Optional[dict[str, Any]] = None
    proof_diagnostics: Optional[dict[str, Any]] = None
    sup_error: Optional[float] = None


class TorsionReport(BaseModel):
    """Result of one torsion run with its boundary identities."""

    problem: str = "torsion"
    norm: str
    body: str
    grid: int = Field(..., ge=3)
    energy: float
    volume: float = Field(..., gt=0.0)
    flux_integral: float
    volume_relative_error: float = Field(..., ge=0.0)
    minkowski_formula: dict[str, float]
    sup_error: Optional[float] = None
    relative_sup_error: Optional[float] = None
    w_trace_mean: float
    w_isotropy_mean: float
    convergence: Convergence


class TargetResult(BaseModel):
    """Outcome of one target inside a multi-target run."""

    target: str
    ok: bool
    result: Optional[dict[str, Any]] = None
    error: Optional[str] = None
    error_type: Optional[str] = None


class CriterionResult(BaseModel):
    id: int
    name: str
    passed: bool
    details: dict[str, Any] = Field(default_factory=dict)


class Envelope(BaseModel):
    """Top-level JSON document written by every subcommand."""

    command: str
    version: str
    generated_at: Optional[str] = None
    results: Any

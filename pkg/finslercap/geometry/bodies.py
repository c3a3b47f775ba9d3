"""Strictly convex bodies given by support functions.

A body is stored as h(theta) = r * G(theta) + <c, theta>, where G is a
1-homogeneous support norm (a `NormModel` used as a support function), r > 0
a scale and c the center. The boundary is parametrized through the inverse
Gauss map x(theta) = grad h(theta), and every surface integral is computed in
Gauss-map coordinates on a `SphereGrid`:

    dH^{N-1}(x(theta)) = det T(theta) dtheta,   T = E^T D^2 h(theta) E,

with E an orthonormal tangent frame at theta.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Sequence

import numpy as np

from finslercap.core.errors import (
    ConstructionError,
    CurvatureSingularityError,
    InvalidArgumentError,
    UnsupportedDimensionError,
)
from finslercap.core.logging_config import get_logger
from finslercap.geometry.sphere import SphereGrid, sphere_grid, tangent_frame
from finslercap.norms.models import (
    EllipsoidalNorm,
    EuclideanNorm,
    NormFamily,
    NormModel,
    SampledNorm,
    SumNorm,
)
from finslercap.symfun import mixed_discriminant

logger = get_logger(__name__)

EQUALITY_TOL = 1e-4
VALIDITY_TOL = 1e-8
CERTIFY_TOL = 1e-3
PD_FLOOR = 1e-12

_ANALYTIC_FAMILIES = (NormFamily.EUCLIDEAN, NormFamily.ELLIPSOIDAL)


class BodyKind(str, Enum):
    """How a body was constructed."""

    WULFF_BALL = "wulff_ball"
    ELLIPSOID = "ellipsoid"
    EUCLIDEAN_BALL = "euclidean_ball"
    SAMPLED_SUPPORT = "sampled_support"
    MINKOWSKI_SUM = "minkowski_sum"


def _is_analytic(model: NormModel) -> bool:
    if isinstance(model, SumNorm):
        return all(_is_analytic(m) for m in model.models)
    return model.family in _ANALYTIC_FAMILIES


@dataclass(frozen=True, eq=False)
class ConvexBody:
    """Support-function representation of a strictly convex C^2 body."""

    support: NormModel
    scale: float
    center: np.ndarray
    kind: BodyKind
    label: str = ""

    @property
    def dimension(self) -> int:
        return self.support.dimension

    def h(self, theta: np.ndarray) -> np.ndarray:
        """Support function h(theta), vectorized over leading axes."""
        theta = np.asarray(theta, dtype=float)
        return self.scale * self.support.h(theta) + theta @ self.center

    def boundary_point(self, theta: np.ndarray) -> np.ndarray:
        """Inverse Gauss map x(theta) = grad h(theta)."""
        theta = np.asarray(theta, dtype=float)
        return self.scale * self.support.grad_h(theta) + self.center

    def tangential_hessian(self, theta: np.ndarray, frames: np.ndarray | None = None) -> np.ndarray:
        """T(theta) = E^T D^2 h(theta) E, shape (K, N-1, N-1)."""
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        if frames is None:
            frames = tangent_frame(theta)
        hess = self.support.hess_h(theta)
        return self.scale * np.einsum("kia,kij,kjb->kab", frames, hess, frames)

    def parameters(self) -> dict[str, Any]:
        return {
            "kind": self.kind.value,
            "scale": float(self.scale),
            "center": self.center.tolist(),
            "support": self.support.parameters(),
        }

    def key(self) -> str:
        return json.dumps(self.parameters(), sort_keys=True)

    def __repr__(self) -> str:
        return f"ConvexBody(kind={self.kind.value!r}, label={self.label!r}, dimension={self.dimension})"


# =============================================================================
# Construction
# =============================================================================


def _center(center: Sequence[float] | np.ndarray | None, dimension: int) -> np.ndarray:
    c = np.zeros(dimension) if center is None else np.array(center, dtype=float).reshape(-1)
    if c.shape != (dimension,):
        raise InvalidArgumentError(f"center must have {dimension} components, got {c.shape[0]}")
    if not np.all(np.isfinite(c)):
        raise InvalidArgumentError("center has non-finite entries")
    c.setflags(write=False)
    return c


def _validate(body: ConvexBody) -> ConvexBody:
    n = body.dimension
    if n > 3 and not _is_analytic(body.support):
        raise UnsupportedDimensionError(
            n, "bodies in N > 3 are limited to Euclidean and ellipsoidal supports"
        )
    grid = sphere_grid(n)
    t = body.tangential_hessian(grid.nodes, grid.frames)
    if not np.all(np.isfinite(t)):
        raise ConstructionError(f"{body.label or body.kind.value}: support is not C^2 at grid nodes")
    eig = np.linalg.eigvalsh(t)
    floor = PD_FLOOR * max(float(np.abs(eig).max()), 1e-300)
    worst = int(np.argmin(eig[:, 0]))
    if eig[worst, 0] <= floor:
        raise ConstructionError(
            f"{body.label or body.kind.value}: tangential Hessian is not positive definite "
            f"at theta={grid.nodes[worst].round(6).tolist()} (lambda_min = {eig[worst, 0]:.3e})"
        )
    logger.debug(
        "body_constructed",
        kind=body.kind.value,
        label=body.label,
        dimension=n,
        message="Convex body validated on the default sphere grid",
    )
    return body


def _positive_radius(r: float) -> float:
    r = float(r)
    if not np.isfinite(r) or r <= 0.0:
        raise InvalidArgumentError(f"radius must be positive and finite, got {r}")
    return r


def wulff_ball(
    model: NormModel,
    r: float = 1.0,
    center: Sequence[float] | np.ndarray | None = None,
    label: str = "",
) -> ConvexBody:
    """B_{H_0}(r) + center: the body with support r H(theta) + <center, theta>."""
    body = ConvexBody(
        support=model,
        scale=_positive_radius(r),
        center=_center(center, model.dimension),
        kind=BodyKind.WULFF_BALL,
        label=label or f"wulff({model.label}, r={float(r):g})",
    )
    return _validate(body)


def euclidean_ball(
    r: float = 1.0,
    center: Sequence[float] | np.ndarray | None = None,
    dimension: int = 3,
    label: str = "",
) -> ConvexBody:
    if center is not None:
        dimension = len(center)
    body = ConvexBody(
        support=EuclideanNorm(dimension),
        scale=_positive_radius(r),
        center=_center(center, dimension),
        kind=BodyKind.EUCLIDEAN_BALL,
        label=label or f"ball(r={float(r):g})",
    )
    return _validate(body)


def ellipsoid(
    semi_axes: Sequence[float],
    rotation: Sequence[Sequence[float]] | np.ndarray | None = None,
    center: Sequence[float] | np.ndarray | None = None,
    label: str = "",
) -> ConvexBody:
    """Ellipsoid with the given semi-axes along the columns of `rotation`.

    Its support function is sqrt(theta^T R diag(a^2) R^T theta).
    """
    a = np.asarray(semi_axes, dtype=float).reshape(-1)
    if a.shape[0] < 2 or not np.all(np.isfinite(a)) or np.any(a <= 0.0):
        raise InvalidArgumentError(f"semi-axes must be positive and finite, got {a.tolist()}")
    n = a.shape[0]
    rot = np.eye(n) if rotation is None else np.asarray(rotation, dtype=float)
    if rot.shape != (n, n) or np.abs(rot.T @ rot - np.eye(n)).max() > 1e-10:
        raise InvalidArgumentError("rotation must be an orthogonal matrix matching the semi-axes")
    matrix = rot @ np.diag(a * a) @ rot.T
    body = ConvexBody(
        support=EllipsoidalNorm(0.5 * (matrix + matrix.T), label="ellipsoid-support"),
        scale=1.0,
        center=_center(center, n),
        kind=BodyKind.ELLIPSOID,
        label=label or f"ellipsoid({', '.join(f'{x:g}' for x in a)})",
    )
    return _validate(body)


def sampled_support(
    values: Sequence[float] | np.ndarray,
    n_pol: int,
    n_az: int,
    center: Sequence[float] | np.ndarray | None = None,
    label: str = "",
) -> ConvexBody:
    """Body whose centered support function is sampled on the N = 3 product grid."""
    support = SampledNorm(values, n_pol, n_az, label="sampled-support")
    body = ConvexBody(
        support=support,
        scale=1.0,
        center=_center(center, 3),
        kind=BodyKind.SAMPLED_SUPPORT,
        label=label or f"sampled({n_pol}x{n_az})",
    )
    return _validate(body)


def minkowski_sum(
    bodies: Sequence[ConvexBody],
    weights: Sequence[float] | None = None,
    label: str = "",
) -> ConvexBody:
    """sum_k w_k K_k; supports add exactly."""
    if not bodies:
        raise InvalidArgumentError("minkowski_sum needs at least one body")
    w = np.ones(len(bodies)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(bodies),) or np.any(w < 0.0) or not np.any(w > 0.0):
        raise InvalidArgumentError("minkowski_sum weights must be nonnegative, not all zero, one per body")
    support = SumNorm(
        [b.support for b in bodies],
        [wk * b.scale for wk, b in zip(w, bodies)],
        label="sum-support",
    )
    center = np.sum([wk * b.center for wk, b in zip(w, bodies)], axis=0)
    body = ConvexBody(
        support=support,
        scale=1.0,
        center=_center(center, support.dimension),
        kind=BodyKind.MINKOWSKI_SUM,
        label=label or " + ".join(b.label for b in bodies),
    )
    return _validate(body)


def scaled(body: ConvexBody, t: float) -> ConvexBody:
    """t * body (homothety about the origin)."""
    t = _positive_radius(t)
    return ConvexBody(
        support=body.support,
        scale=body.scale * t,
        center=_center(t * body.center, body.dimension),
        kind=body.kind,
        label=f"{t:g}*({body.label})",
    )


def translated(body: ConvexBody, offset: Sequence[float] | np.ndarray) -> ConvexBody:
    return ConvexBody(
        support=body.support,
        scale=body.scale,
        center=_center(body.center + np.asarray(offset, dtype=float), body.dimension),
        kind=body.kind,
        label=body.label,
    )


def gauge(body: ConvexBody, x: np.ndarray) -> np.ndarray:
    """Minkowski gauge of the body about its center; the body is {gauge <= 1}."""
    x = np.asarray(x, dtype=float)
    return body.support.dual(x - body.center) / body.scale


# =============================================================================
# Quadrature
# =============================================================================


@dataclass(frozen=True)
class SurfaceData:
    """Nodal support data of a body on a sphere grid."""

    h: np.ndarray
    tangential_hessian: np.ndarray
    area_element: np.ndarray


def surface_data(body: ConvexBody, grid: SphereGrid | None = None) -> SurfaceData:
    grid = grid or sphere_grid(body.dimension)
    if grid.dimension != body.dimension:
        raise InvalidArgumentError(
            f"grid dimension {grid.dimension} does not match body dimension {body.dimension}"
        )
    t = body.tangential_hessian(grid.nodes, grid.frames)
    return SurfaceData(h=body.h(grid.nodes), tangential_hessian=t, area_element=np.linalg.det(t))


def _model_tangential_hessian(model: NormModel, grid: SphereGrid) -> np.ndarray:
    return np.einsum("kia,kij,kjb->kab", grid.frames, model.hess_h(grid.nodes), grid.frames)


def volume(body: ConvexBody, grid: SphereGrid | None = None) -> float:
    """|Omega| = (1/N) int h det T dtheta."""
    grid = grid or sphere_grid(body.dimension)
    data = surface_data(body, grid)
    return float(grid.integrate(data.h * data.area_element) / body.dimension)


def perimeter_aniso(body: ConvexBody, model: NormModel, grid: SphereGrid | None = None) -> float:
    """P_H(Omega) = int H(theta) det T dtheta."""
    grid = grid or sphere_grid(body.dimension)
    data = surface_data(body, grid)
    return float(grid.integrate(model.h(grid.nodes) * data.area_element))


def mean_curvature_aniso(body: ConvexBody, model: NormModel, theta: np.ndarray) -> float | np.ndarray:
    """M_H at x(theta): tr((E^T D^2 H(theta) E) T^{-1}).

    Raises:
        CurvatureSingularityError: if T(theta) is singular.
    """
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim == 1
    pts = np.atleast_2d(theta)
    pts = pts / np.linalg.norm(pts, axis=1, keepdims=True)
    frames = tangent_frame(pts)
    t = body.tangential_hessian(pts, frames)
    det = np.linalg.det(t)
    scale = np.abs(t).max(axis=(1, 2)) ** (body.dimension - 1)
    bad = np.flatnonzero(~(np.abs(det) > PD_FLOOR * scale))
    if bad.size:
        k = int(bad[0])
        raise CurvatureSingularityError(pts[k].tolist(), float(det[k]))
    q = np.einsum("kia,kij,kjb->kab", frames, model.hess_h(pts), frames)
    m = np.trace(np.linalg.solve(t, q), axis1=1, axis2=2)
    return float(m[0]) if single else m


def _curvature_weighted(body: ConvexBody, model: NormModel, grid: SphereGrid) -> np.ndarray:
    # (M_H / (N-1)) det T, as the mixed discriminant D(Q, T, ..., T)
    data = surface_data(body, grid)
    return mixed_discriminant(data.tangential_hessian, _model_tangential_hessian(model, grid))


def mixed_volume_vbkk(body: ConvexBody, model: NormModel, grid: SphereGrid | None = None) -> float:
    """V(B_{H_0}, Omega, ..., Omega) = P_H(Omega) / N."""
    return perimeter_aniso(body, model, grid) / body.dimension


def mixed_volume_vbbk(body: ConvexBody, model: NormModel, grid: SphereGrid | None = None) -> float:
    """V(B_{H_0}, B_{H_0}, Omega, ..., Omega) = (1/N) int (M_H/(N-1)) H dH^{N-1}."""
    grid = grid or sphere_grid(body.dimension)
    weighted = _curvature_weighted(body, model, grid)
    return float(grid.integrate(model.h(grid.nodes) * weighted) / body.dimension)


# =============================================================================
# Inequalities and derived quantities
# =============================================================================


@dataclass
class InequalityReport:
    """P_H(Omega)^2 >= N |Omega| int (M_H/(N-1)) H(nu)."""

    lhs: float
    rhs: float
    slack: float
    relative_slack: float
    equality: bool
    valid: bool

    def to_dict(self) -> dict:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "relative_slack": self.relative_slack,
            "equality": self.equality,
            "valid": self.valid,
        }


def minkowski_inequality_check(
    body: ConvexBody,
    model: NormModel,
    grid: SphereGrid | None = None,
    tol_eq: float = EQUALITY_TOL,
) -> InequalityReport:
    grid = grid or sphere_grid(body.dimension)
    n = body.dimension
    data = surface_data(body, grid)
    hn = model.h(grid.nodes)
    perimeter = float(grid.integrate(hn * data.area_element))
    vol = float(grid.integrate(data.h * data.area_element) / n)
    curv = float(grid.integrate(hn * mixed_discriminant(data.tangential_hessian,
                                                         _model_tangential_hessian(model, grid))))
    lhs = perimeter * perimeter
    rhs = n * vol * curv
    slack = lhs - rhs
    report = InequalityReport(
        lhs=lhs,
        rhs=rhs,
        slack=slack,
        relative_slack=slack / lhs,
        equality=bool(abs(slack) <= tol_eq * lhs),
        valid=bool(slack >= -VALIDITY_TOL * lhs),
    )
    if not report.valid:
        logger.warning(
            "minkowski_inequality_violated",
            body=body.label,
            norm=model.label,
            relative_slack=report.relative_slack,
            message="Anisotropic Minkowski inequality slack is below the validity floor",
        )
    return report


def minkowski_formula_residual(body: ConvexBody, model: NormModel, grid: SphereGrid | None = None) -> dict:
    """P_H(Omega) against int (M_H/(N-1)) <x - c, nu> dH^{N-1}."""
    grid = grid or sphere_grid(body.dimension)
    weighted = _curvature_weighted(body, model, grid)
    centered = body.scale * body.support.h(grid.nodes)
    rhs = float(grid.integrate(centered * weighted))
    perimeter = perimeter_aniso(body, model, grid)
    return {
        "perimeter": perimeter,
        "curvature_integral": rhs,
        "relative_residual": abs(perimeter - rhs) / perimeter,
    }


def inradius_outradius_h0(body: ConvexBody, model: NormModel, grid: SphereGrid | None = None) -> tuple[float, float]:
    """(R_0, R_1): the largest B_{H_0}(r) about the origin inside the body and
    the smallest containing it."""
    grid = grid or sphere_grid(body.dimension)
    ratio = body.h(grid.nodes) / model.h(grid.nodes)
    return float(ratio.min()), float(ratio.max())


def mean_curvature_stats(
    body: ConvexBody,
    model: NormModel,
    grid: SphereGrid | None = None,
    tol: float = EQUALITY_TOL,
) -> dict:
    """Area-weighted statistics of M_H over the boundary."""
    grid = grid or sphere_grid(body.dimension)
    m = mean_curvature_aniso(body, model, grid.nodes)
    area = surface_data(body, grid).area_element * grid.weights
    total = float(area.sum())
    mean = float(np.sum(area * m) / total)
    std = float(np.sqrt(np.sum(area * (m - mean) ** 2) / total))
    cv = std / abs(mean)
    return {
        "min": float(m.min()),
        "max": float(m.max()),
        "mean": mean,
        "cv": cv,
        "constant_curvature": bool(cv <= tol),
    }


def isoperimetric_ratio(body: ConvexBody, model: NormModel, grid: SphereGrid | None = None) -> float:
    """P_H^N / (N^N |B_{H_0}(1)| |Omega|^{N-1}), >= 1 with equality on Wulff balls."""
    grid = grid or sphere_grid(body.dimension)
    n = body.dimension
    unit = volume(wulff_ball(model, 1.0), grid)
    return float(perimeter_aniso(body, model, grid) ** n / (n ** n * unit * volume(body, grid) ** (n - 1)))


@dataclass
class CertifiedValue:
    value: float
    refined_value: float
    relative_change: float
    certified: bool
    orders: tuple[int, ...] = field(default_factory=tuple)


def certify(
    body: ConvexBody,
    fn: Callable[[SphereGrid], float],
    grid: SphereGrid | None = None,
    tol: float = CERTIFY_TOL,
) -> CertifiedValue:
    """Evaluate `fn` on a grid and on the grid with doubled orders."""
    grid = grid or sphere_grid(body.dimension)
    value = float(fn(grid))
    refined = float(fn(grid.refined()))
    change = abs(refined - value) / max(abs(refined), 1e-300)
    certified = change < tol
    if not certified:
        logger.warning(
            "quadrature_uncertified",
            body=body.label,
            orders=list(grid.orders),
            relative_change=change,
            message="Doubling the sphere grid changed the integral by more than the certification tolerance",
        )
    return CertifiedValue(value, refined, change, certified, tuple(grid.orders))


def body_report(body: ConvexBody, model: NormModel, grid: SphereGrid | None = None) -> dict:
    """Volume, anisotropic perimeter, curvature statistics and the Minkowski slack."""
    grid = grid or sphere_grid(body.dimension)
    vol = certify(body, lambda g: volume(body, g), grid)
    per = certify(body, lambda g: perimeter_aniso(body, model, g), grid)
    r0, r1 = inradius_outradius_h0(body, model, grid)
    return {
        "body": body.label,
        "norm": model.label,
        "dimension": body.dimension,
        "grid": list(grid.orders),
        "volume": vol.value,
        "perimeter": per.value,
        "certified": vol.certified and per.certified,
        "mixed_volume_vbkk": per.value / body.dimension,
        "mixed_volume_vbbk": mixed_volume_vbbk(body, model, grid),
        "mean_curvature": mean_curvature_stats(body, model, grid),
        "minkowski": minkowski_inequality_check(body, model, grid).to_dict(),
        "minkowski_formula": minkowski_formula_residual(body, model, grid),
        "isoperimetric_ratio": isoperimetric_ratio(body, model, grid),
        "inradius_h0": r0,
        "outradius_h0": r1,
    }

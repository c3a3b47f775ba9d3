"""Post-processing of converged fields.

Boundary fluxes H(Du) on the body, the Finsler Laplacian and its level-set
decomposition, decay brackets of exterior potentials, the torsion
identities, and the diagnostics of the auxiliary function v = u^{-2/(N-2)}
(the matrix W = D^2 V(Dv) D^2 v, its Newton slack, the boundary identity and
the multiplier gamma).

Second derivatives use compact central differences, which are available at
every interior node since all its neighbours are interior or ghost nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from finslercap.core.errors import InvalidArgumentError
from finslercap.core.logging_config import get_logger
from finslercap.geometry.bodies import (
    ConvexBody,
    mean_curvature_aniso,
    minkowski_formula_residual,
    surface_data,
    volume,
)
from finslercap.geometry.sphere import SphereGrid, sphere_grid
from finslercap.norms.models import NormModel
from finslercap.pde.domain import ScalarField
from finslercap.symfun import NEWTON_SLACK_TOL, s2_fast

logger = get_logger(__name__)

FLUX_STEP = 1.5
MASK_FULL = 1.0 - 1e-9
GRADIENT_FLOOR = 1e-8


# =============================================================================
# Finite differences
# =============================================================================


def _shift(values: np.ndarray, axis_steps: Sequence[int]) -> np.ndarray:
    # values at x + sum_i steps_i h e_i (wraps at the faces, never read there)
    out = values
    for axis, step in enumerate(axis_steps):
        if step:
            out = np.roll(out, -step, axis=axis)
    return out


def grid_derivatives(values: np.ndarray, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Central first and second differences on the whole grid.

    Returns (grad, hess) with shapes (N, *shape) and (N, N, *shape).
    """
    n = values.ndim
    grad = np.empty((n,) + values.shape)
    hess = np.empty((n, n) + values.shape)
    for i in range(n):
        ei = [0] * n
        ei[i] = 1
        plus = _shift(values, ei)
        minus = _shift(values, [-s for s in ei])
        grad[i] = (plus - minus) / (2.0 * spacing)
        hess[i, i] = (plus - 2.0 * values + minus) / spacing ** 2
        for j in range(i + 1, n):
            pp = [0] * n
            pp[i], pp[j] = 1, 1
            pm = [0] * n
            pm[i], pm[j] = 1, -1
            mixed = (
                _shift(values, pp)
                - _shift(values, pm)
                - _shift(values, [-s for s in pm])
                + _shift(values, [-s for s in pp])
            ) / (4.0 * spacing ** 2)
            hess[i, j] = hess[j, i] = mixed
    return grad, hess


def _at_nodes(grad: np.ndarray, hess: np.ndarray, nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = grad.shape[0]
    g = grad.reshape(n, -1)[:, nodes].T
    h = hess.reshape(n, n, -1)[:, :, nodes].transpose(2, 0, 1)
    return g, h


def _deep_nodes(field_: ScalarField) -> np.ndarray:
    """Interior nodes whose axis neighbours are interior too."""
    domain = field_.domain
    interior = domain.interior_mask.reshape(domain.shape)
    deep = interior.copy()
    for i in range(domain.dimension):
        e = [0] * domain.dimension
        e[i] = 1
        deep &= _shift(interior, e) & _shift(interior, [-s for s in e])
    return np.flatnonzero(deep.reshape(-1))


def _h0(field_: ScalarField, model: NormModel) -> np.ndarray:
    return field_.domain.cached("h0", lambda: model.dual(field_.domain.coordinates()))


# =============================================================================
# Boundary flux
# =============================================================================


@dataclass
class FluxSamples:
    """H(Du) at the boundary points x(theta) of a body."""

    theta: np.ndarray
    points: np.ndarray
    values: np.ndarray
    weights: np.ndarray
    degraded: np.ndarray
    mean: float
    std: float
    cv: float
    min: float
    max: float

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "cv": self.cv,
            "min": self.min,
            "max": self.max,
            "samples": int(self.values.shape[0]),
            "degraded": int(self.degraded.sum()),
        }

    def integral(self, density: np.ndarray | None = None) -> float:
        """Surface integral of H(Du) (times an optional nodal density)."""
        vals = self.values if density is None else self.values * density
        ok = np.isfinite(vals)
        return float(np.sum(self.weights[ok] * vals[ok]))

    def rows(self) -> list[dict]:
        """One CSV row per sample: theta_index, coordinates, H_Du."""
        axes = "xyzw"[: self.points.shape[1]] if self.points.shape[1] <= 4 else None
        out = []
        for k in range(self.values.shape[0]):
            row: dict = {"theta_index": k}
            for i in range(self.points.shape[1]):
                row[axes[i] if axes else f"x{i}"] = float(self.points[k, i])
            row["H_Du"] = float(self.values[k])
            out.append(row)
        return out


def _linearized(values: np.ndarray, alpha: float, beta: float, n: int) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.power(np.maximum(alpha * values + beta, 1e-300), -1.0 / (n - 2))


def boundary_flux(
    field_: ScalarField,
    model: NormModel,
    body: ConvexBody,
    side: str = "exterior",
    grid: SphereGrid | None = None,
    bc_value: float | None = None,
    step: float = FLUX_STEP,
) -> FluxSamples:
    """Sample H(Du) on the boundary of `body` from the region on `side`.

    The normal derivative uses the one-sided second-order difference
    (-3 u_0 + 4 u_1 - u_2) / (2 delta) with delta = step * spacing along the
    normal into the region, u_0 being the boundary value. When the field
    carries a `flux_linearization` (alpha, beta), the difference is taken on
    w = (alpha u + beta)^{-1/(N-2)}, which is linear along rays for Wulff
    potentials. Samples whose stencil leaves the active nodes fall back to a
    first-order difference and are flagged as degraded.
    """
    if side not in ("exterior", "interior"):
        raise InvalidArgumentError(f"side must be 'exterior' or 'interior', got '{side}'")
    domain = field_.domain
    n = domain.dimension
    grid = grid or sphere_grid(n)
    if bc_value is None:
        bc_value = float(field_.metadata.get("boundary_values", [np.nan])[0])
        if not np.isfinite(bc_value):
            raise InvalidArgumentError("field carries no boundary value; pass bc_value")

    theta = grid.nodes
    points = body.boundary_point(theta)
    direction = theta if side == "exterior" else -theta
    delta = step * domain.spacing

    lin = field_.metadata.get("flux_linearization")
    values = field_.values
    w0 = bc_value
    if lin is not None and n > 2:
        alpha, beta = float(lin[0]), float(lin[1])
        values = _linearized(values, alpha, beta, n)
        w0 = float(_linearized(np.asarray(bc_value), alpha, beta, n))

    interp = field_.interpolator(values)
    mask = field_.interpolator(domain.stencil_mask())
    p1 = points + delta * direction
    p2 = points + 2.0 * delta * direction
    w1, w2 = interp(p1), interp(p2)
    ok1 = mask(p1) >= MASK_FULL
    ok2 = mask(p2) >= MASK_FULL

    second = (-3.0 * w0 + 4.0 * w1 - w2) / (2.0 * delta)
    first = (w1 - w0) / delta
    slope = np.where(ok1 & ok2, second, np.where(ok1, first, np.nan))
    degraded = ~(ok1 & ok2)

    if lin is not None and n > 2:
        # du/dw at the boundary
        slope = slope * (n - 2) * w0 ** (-(n - 1)) / alpha
    flux = np.abs(slope) * model.h(theta)

    weights = surface_data(body, grid).area_element * grid.weights
    ok = np.isfinite(flux)
    if not np.any(ok):
        raise InvalidArgumentError("no boundary sample has a valid stencil; refine the grid")
    total = float(weights[ok].sum())
    mean = float(np.sum(weights[ok] * flux[ok]) / total)
    std = float(np.sqrt(np.sum(weights[ok] * (flux[ok] - mean) ** 2) / total))
    if np.any(degraded):
        logger.warning(
            "flux_degraded_samples",
            degraded=int(degraded.sum()),
            invalid=int((~ok).sum()),
            samples=int(flux.shape[0]),
            message="Some flux stencils leave the active nodes; first-order differences used",
        )
    return FluxSamples(
        theta=theta,
        points=points,
        values=flux,
        weights=weights,
        degraded=degraded,
        mean=mean,
        std=std,
        cv=std / abs(mean) if mean else float("inf"),
        min=float(np.nanmin(flux)),
        max=float(np.nanmax(flux)),
    )


# =============================================================================
# Finsler Laplacian
# =============================================================================


def _live(grad: np.ndarray, floor: float) -> np.ndarray:
    return np.linalg.norm(grad, axis=1) > floor


def finsler_laplacian_apply(field_: ScalarField, model: NormModel, gradient_floor: float = GRADIENT_FLOOR) -> ScalarField:
    """Delta_H u = tr(D^2 V(Du) D^2 u) at interior nodes; NaN where skipped.

    Nodes with |Du| below `gradient_floor` (relative to the largest gradient)
    are skipped, and their count is stored in the metadata.
    """
    domain = field_.domain
    grad, hess = grid_derivatives(field_.values, domain.spacing)
    nodes = domain.interior_nodes
    g, d2 = _at_nodes(grad, hess, nodes)
    floor = gradient_floor * max(float(np.abs(g).max()), 1e-300)
    live = _live(g, floor)
    out = np.full(domain.node_count, np.nan)
    if np.any(live):
        a = model.hess_v(g[live])
        out[nodes[live]] = np.einsum("kij,kji->k", a, d2[live])
    skipped = int((~live).sum())
    if skipped:
        logger.debug("laplacian_nodes_skipped", skipped=skipped, message="Gradient below floor")
    return field_.with_values(out, kind="finsler_laplacian", skipped_nodes=skipped)


def curvature_decomposition_check(
    field_: ScalarField,
    model: NormModel,
    level: float | None = None,
    gradient_floor: float = GRADIENT_FLOOR,
) -> dict:
    """Residual of Delta_H u = -M_H H(Du) + H_i H_j u_ij on level sets of u.

    M_H is the anisotropic mean curvature of {u = t} with respect to the
    normal -Du/|Du| (outward for potentials decreasing away from the body),
    computed as -div grad H(Du) by central differences of the vector field,
    independently of the Laplacian itself. `level` restricts the check to
    nodes within one cell of {u = level}.
    """
    domain = field_.domain
    n = domain.dimension
    h = domain.spacing
    grad, hess = grid_derivatives(field_.values, h)
    flat_grad = grad.reshape(n, -1).T

    interior = domain.interior_nodes
    floor = gradient_floor * max(float(np.abs(flat_grad[interior]).max()), 1e-300)
    normal_field = np.zeros((domain.node_count, n))
    active = domain.active_nodes
    live_active = np.linalg.norm(flat_grad[active], axis=1) > floor
    normal_field[active[live_active]] = model.grad_h(flat_grad[active[live_active]])
    divergence = np.zeros(domain.node_count)
    for i in range(n):
        comp = normal_field[:, i].reshape(domain.shape)
        e = [0] * n
        e[i] = 1
        divergence += ((_shift(comp, e) - _shift(comp, [-s for s in e])) / (2.0 * h)).reshape(-1)

    nodes = _deep_nodes(field_)
    g, d2 = _at_nodes(grad, hess, nodes)
    live = _live(g, floor)
    if level is not None:
        u = field_.flat()[nodes]
        live &= np.abs(u - level) <= h * np.linalg.norm(g, axis=1)
    if not np.any(live):
        raise InvalidArgumentError("no nodes with a usable gradient on the requested level set")
    nodes, g, d2 = nodes[live], g[live], d2[live]

    lap = np.einsum("kij,kji->k", model.hess_v(g), d2)
    hg = model.h(g)
    dh = model.grad_h(g)
    mean_curv = -divergence[nodes]
    normal_part = np.einsum("ki,kij,kj->k", dh, d2, dh)
    residual = lap - (-mean_curv * hg + normal_part)
    scale = max(float(np.abs(lap).max()), float(np.abs(normal_part).max()), 1e-300)
    return {
        "level": level,
        "nodes": int(nodes.shape[0]),
        "max_residual": float(np.abs(residual).max()),
        "mean_residual": float(np.abs(residual).mean()),
        "relative_residual": float(np.abs(residual).max() / scale),
        "mean_curvature_mean": float(mean_curv.mean()),
    }


# =============================================================================
# Decay and profiles
# =============================================================================


def decay_brackets(
    field_: ScalarField,
    model: NormModel,
    r1: float,
    r_out: float,
) -> dict | None:
    """A_1 <= u H_0^{N-2} <= A_2 and B_1 <= H(Du) H_0^{N-1} <= B_2 for 2 R_1 <= H_0 <= R_out / 2.

    Returns None when no interior node lies in that shell.
    """
    domain = field_.domain
    n = domain.dimension
    h0 = _h0(field_, model)
    nodes = domain.interior_nodes
    nodes = nodes[(h0[nodes] >= 2.0 * r1) & (h0[nodes] <= 0.5 * r_out)]
    if nodes.size == 0:
        return None
    grad, hess = grid_derivatives(field_.values, domain.spacing)
    g, _ = _at_nodes(grad, hess, nodes)
    a = field_.flat()[nodes] * h0[nodes] ** (n - 2)
    b = model.h(g) * h0[nodes] ** (n - 1)
    return {
        "shell": [2.0 * r1, 0.5 * r_out],
        "nodes": int(nodes.size),
        "A1": float(a.min()),
        "A2": float(a.max()),
        "B1": float(b.min()),
        "B2": float(b.max()),
        "ratio_A": float(a.max() / a.min()),
        "ratio_B": float(b.max() / b.min()),
    }


def radial_profile(
    field_: ScalarField,
    model: NormModel,
    closed_form: Callable[[np.ndarray], np.ndarray] | None = None,
    count: int = 64,
    directions: np.ndarray | None = None,
) -> list[dict]:
    """Samples (H0, u, u_closed_form) along rays from the origin, inside the region."""
    domain = field_.domain
    n = domain.dimension
    if directions is None:
        directions = np.stack([np.eye(n)[0], np.ones(n) / np.sqrt(n)])
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    reach = float(np.min(np.abs(domain.lo)))
    mask = field_.interpolator(domain.stencil_mask())
    rows = []
    for k, d in enumerate(directions):
        d = d / np.linalg.norm(d)
        pts = np.linspace(0.0, reach, count)[:, None] * d[None, :]
        u = field_.sample(pts)
        keep = (mask(pts) >= MASK_FULL) & np.isfinite(u)
        if not np.any(keep):
            continue
        h0 = model.dual(pts[keep])
        exact = closed_form(h0) if closed_form is not None else np.full(h0.shape, np.nan)
        for h0_i, u_i, e_i in zip(h0, u[keep], exact):
            rows.append({"direction": k, "H0": float(h0_i), "u": float(u_i), "u_closed_form": float(e_i)})
    return rows


# =============================================================================
# Torsion identities
# =============================================================================


def _w_matrix(grad: np.ndarray, hess: np.ndarray, model: NormModel) -> np.ndarray:
    return model.hess_v(grad) @ hess


def torsion_identities(field_: ScalarField, model: NormModel, body: ConvexBody, grid: SphereGrid | None = None) -> dict:
    """Checks on a torsion solution psi (Delta_H psi = 1, psi = 0 on the boundary).

    - volume: int H(nu) H(D psi) over the boundary equals |Omega|;
    - the anisotropic Minkowski-type formula of the body;
    - W = D^2 V(D psi) D^2 psi has trace 1, and is I/N on Wulff balls.
    """
    grid = grid or sphere_grid(body.dimension)
    n = body.dimension
    flux = boundary_flux(field_, model, body, side="interior", grid=grid, bc_value=0.0)
    lhs = flux.integral(density=model.h(grid.nodes))
    vol = volume(body, grid)

    grad, hess = grid_derivatives(field_.values, field_.domain.spacing)
    g, d2 = _at_nodes(grad, hess, field_.domain.interior_nodes)
    live = _live(g, GRADIENT_FLOOR * max(float(np.abs(g).max()), 1e-300))
    w = _w_matrix(g[live], d2[live], model)
    tr = np.trace(w, axis1=1, axis2=2)
    iso = np.abs(w - (tr / n)[:, None, None] * np.eye(n)).max(axis=(1, 2))
    return {
        "volume": vol,
        "flux_integral": lhs,
        "volume_relative_error": abs(lhs - vol) / vol,
        "flux": flux.to_dict(),
        "minkowski_formula": minkowski_formula_residual(body, model, grid),
        "w_trace_mean": float(tr.mean()),
        "w_trace_max_error": float(np.abs(tr - 1.0).max()),
        "w_isotropy_mean": float(iso.mean()),
        "w_isotropy_max": float(iso.max()),
    }


# =============================================================================
# Auxiliary function v = u^{-2/(N-2)}
# =============================================================================


@dataclass
class ProofDiagnostics:
    newton: dict
    boundary_identity: dict
    gamma: dict
    cofactor_divergence: dict
    nodes: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes,
            "newton": self.newton,
            "boundary_identity": self.boundary_identity,
            "gamma": self.gamma,
            "cofactor_divergence": self.cofactor_divergence,
            **self.extra,
        }


def auxiliary_field(field_: ScalarField) -> ScalarField:
    """v = u^{-2/(N-2)}; v = H_0^2 / r^2 for the potential of B_{H_0}(r)."""
    n = field_.domain.dimension
    if n < 3:
        raise InvalidArgumentError("the auxiliary function needs N >= 3")
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.where(field_.values > 0.0, field_.values ** (-2.0 / (n - 2)), np.nan)
    return field_.with_values(v, kind="auxiliary")


def _cofactor2(w: np.ndarray) -> np.ndarray:
    # dS_2/dw_ij = tr(W) delta_ij - w_ji
    n = w.shape[-1]
    tr = np.trace(w, axis1=-2, axis2=-1)
    return tr[..., None, None] * np.eye(n) - np.swapaxes(w, -1, -2)


def _stats(values: np.ndarray) -> dict:
    values = values[np.isfinite(values)]
    if values.size == 0:
        return {"mean": None, "max": None, "min": None, "cv": None}
    mean = float(values.mean())
    return {
        "mean": mean,
        "max": float(values.max()),
        "min": float(values.min()),
        "cv": float(values.std() / abs(mean)) if mean else None,
    }


def proof_diagnostics(
    field_: ScalarField,
    model: NormModel,
    body: ConvexBody,
    flux_mean: float | None = None,
) -> ProofDiagnostics:
    """Reported (never asserted) quantities of the auxiliary problem for v.

    - newton: S_2(W) against ((N-1)/(2N)) Tr(W)^2 and the isotropy of W;
    - boundary_identity: S^2_ij(W) V_i(Dv) v_j - H(Dv)^3 M_H at the first
      interior layer around the body;
    - gamma: Tr(W)/N against V(Dv)/v, constant on the boundary for Wulff
      balls and equal to (1/2)(2C/(N-2))^2 there when H(Du) = C;
    - cofactor_divergence: the column divergence of S^2(W).
    """
    domain = field_.domain
    n = domain.dimension
    h = domain.spacing
    v_field = auxiliary_field(field_)
    grad, hess = grid_derivatives(v_field.values, h)
    nodes = domain.interior_nodes
    g, d2 = _at_nodes(grad, hess, nodes)
    ok = np.all(np.isfinite(g), axis=1) & np.all(np.isfinite(d2), axis=(1, 2))
    ok &= _live(np.where(np.isfinite(g), g, 0.0), GRADIENT_FLOOR * float(np.nanmax(np.abs(g))))
    nodes, g, d2 = nodes[ok], g[ok], d2[ok]
    w = _w_matrix(g, d2, model)

    tr = np.trace(w, axis1=1, axis2=2)
    s2 = s2_fast(w)
    bound = (n - 1) / (2.0 * n) * tr * tr
    slack = bound - s2
    scale = np.maximum(1.0, np.abs(bound))
    iso = np.abs(w - (tr / n)[:, None, None] * np.eye(n)).max(axis=(1, 2)) / np.maximum(np.abs(tr / n), 1e-300)
    newton = {
        "min_relative_slack": float((slack / scale).min()),
        "violations": int(np.sum(slack < -NEWTON_SLACK_TOL * scale)),
        "isotropy": _stats(iso),
    }

    v = v_field.flat()[nodes]
    gamma_trace = tr / n
    gamma_pde = model.v(g) / v
    gamma_rel = np.abs(gamma_trace - gamma_pde) / np.maximum(np.abs(gamma_pde), 1e-300)

    # first interior layer around the body
    inner = domain.boundary_index("inner")
    layer = np.array([], dtype=np.int64)
    if inner is not None:
        layer = np.unique(domain.ghost_partner[domain.ghost_boundary == inner])
    pos = np.flatnonzero(np.isin(nodes, layer))
    boundary_identity: dict = {"nodes": int(pos.size)}
    gamma_boundary = gamma_trace[pos]
    if pos.size:
        gb, wb = g[pos], w[pos]
        theta = gb / np.linalg.norm(gb, axis=1, keepdims=True)
        lhs = np.einsum("kij,ki,kj->k", _cofactor2(wb), model.grad_v(gb), gb)
        rhs = model.h(gb) ** 3 * mean_curvature_aniso(body, model, theta)
        rel = np.abs(lhs - rhs) / np.maximum(np.abs(rhs), 1e-300)
        boundary_identity.update({
            "lhs": _stats(lhs),
            "rhs": _stats(rhs),
            "relative_residual": _stats(rel),
        })

    expected = None
    if flux_mean is not None:
        expected = 0.5 * (2.0 * flux_mean / (n - 2)) ** 2
    gamma = {
        "relative_mismatch": _stats(gamma_rel),
        "boundary": _stats(gamma_boundary),
        "expected_boundary": expected,
    }

    cof = np.full((domain.node_count, n, n), np.nan)
    cof[nodes] = _cofactor2(w)
    div = np.zeros((domain.node_count, n))
    for j in range(n):
        col = cof[:, :, j].reshape(domain.shape + (n,))
        fwd = np.roll(col, -1, axis=j)
        bwd = np.roll(col, 1, axis=j)
        div += ((fwd - bwd) / (2.0 * h)).reshape(-1, n)
    deep = np.intersect1d(_deep_nodes(field_), nodes)
    div_deep = np.linalg.norm(div[deep], axis=1) if deep.size else np.array([])
    cof_size = np.abs(cof[deep]).max(axis=(1, 2)) if deep.size else np.array([])
    cofactor_divergence = {
        "nodes": int(deep.size),
        "max": float(np.nanmax(div_deep)) if div_deep.size else None,
        "mean": float(np.nanmean(div_deep)) if div_deep.size else None,
        "relative_mean": float(np.nanmean(div_deep * h / np.maximum(cof_size, 1e-300))) if div_deep.size else None,
    }

    if newton["violations"]:
        logger.warning(
            "newton_violations_in_field",
            violations=newton["violations"],
            message="Discrete W violates the Newton inequality at some nodes",
        )
    return ProofDiagnostics(
        newton=newton,
        boundary_identity=boundary_identity,
        gamma=gamma,
        cofactor_divergence=cofactor_divergence,
        nodes=int(nodes.size),
    )

"""Dirichlet, annulus, exterior-capacity and torsion solves on voxel grids.

Every solve minimizes a discrete energy (see `finslercap.pde.energy`) over
the interior unknowns with `minimize_ncg`; the boundary data enter through
the ghost-node offset of the domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from finslercap.core.cache import solve_cache
from finslercap.core.config import settings
from finslercap.core.errors import (
    InvalidArgumentError,
    SolverInconsistencyError,
    UnsupportedDimensionError,
)
from finslercap.core.logging_config import get_logger
from finslercap.geometry.bodies import ConvexBody, gauge, inradius_outradius_h0, volume, wulff_ball
from finslercap.geometry.sphere import sphere_grid
from finslercap.norms.models import NormModel, is_pde_admissible
from finslercap.pde.domain import (
    MIN_CELLS_ACROSS,
    THETA_MIN,
    Boundary,
    ScalarField,
    VoxelDomain,
    cube_axes,
    grid_coordinates,
)
from finslercap.pde.energy import GRADIENT_FLOOR, EnergyAssembly, ReducedEnergy, energy
from finslercap.pde.optimizer import NCGOptions, NCGResult, minimize_ncg

logger = get_logger(__name__)

MONOTONICITY_TOL = 1e-8
MAX_PRINCIPLE_TOL = 1e-10
DEFAULT_R_OUT = (4.0, 8.0)
PATCH_REACH = 2.0
PATCH_FILL = 0.8
PATCH_GAP_CELLS = 2


@dataclass(frozen=True)
class SolverOptions:
    """Optimizer and discretization settings shared by all solves."""

    max_iters: int | None = None
    grad_tol: float = 1e-9
    energy_tol: float = 1e-12
    window: int = 10
    c1: float = 1e-4
    c2: float = 0.1
    theta_min: float = THETA_MIN
    gradient_floor: float = GRADIENT_FLOOR
    margin: int = 2
    #: exterior solves refine near the body until its inradius spans this many cells; 0 accepts any grid
    min_cells_across: float = MIN_CELLS_ACROSS

    def ncg(self) -> NCGOptions:
        return NCGOptions(
            max_iters=self.max_iters if self.max_iters is not None else settings.MAX_ITERS,
            grad_tol=self.grad_tol,
            energy_tol=self.energy_tol,
            window=self.window,
            c1=self.c1,
            c2=self.c2,
        )


def _require_admissible(model: NormModel) -> None:
    if not is_pde_admissible(model):
        raise InvalidArgumentError(
            f"norm '{model.label or model.family.value}' is not uniformly convex; wrap it in RegularizedNorm"
        )


def _minimize(
    domain: VoxelDomain,
    model: NormModel,
    bc: Sequence[float],
    initial: np.ndarray,
    opts: SolverOptions,
    problem: str,
    source: float = 0.0,
    scale: float = 1.0,
) -> tuple[ScalarField, NCGResult]:
    assembly = EnergyAssembly(domain, model, source=source, gradient_floor=opts.gradient_floor, scale=scale)
    reduced = ReducedEnergy(assembly, bc)
    u0 = np.asarray(initial, dtype=float).reshape(-1)[domain.interior_nodes]
    grad_scale = domain.spacing ** (domain.dimension - 2) * scale
    result = minimize_ncg(reduced.value_and_grad, u0, opts.ncg(), grad_scale=grad_scale, problem=problem)
    metadata = {
        "problem": problem,
        "norm": model.key(),
        "boundary_values": [float(b) for b in bc],
        "energy": result.energy,
        "iterations": result.iterations,
        "final_grad": result.final_grad,
        "stop_reason": result.reason,
    }
    return ScalarField.from_solution(domain, result.x, bc, kind=problem, metadata=metadata), result


def _check_max_principle(field_: ScalarField, lo: float, hi: float) -> float:
    vals = field_.interior_values()
    excess = float(max(vals.max() - hi, lo - vals.min(), 0.0))
    field_.metadata["max_principle_excess"] = excess
    if excess > MAX_PRINCIPLE_TOL * max(1.0, abs(hi - lo)):
        logger.warning(
            "max_principle_violated",
            problem=field_.kind,
            excess=excess,
            message="Discrete solution leaves the range of its boundary values",
        )
    return excess


# =============================================================================
# General Dirichlet problems
# =============================================================================


def solve_dirichlet(
    domain: VoxelDomain,
    model: NormModel,
    bc_inner: float,
    bc_outer: float,
    opts: SolverOptions | None = None,
    initial: np.ndarray | None = None,
) -> ScalarField:
    """Minimize the energy with value `bc_inner` on inner and `bc_outer` on outer boundaries.

    The default initial guess blends the two values by the level sets,
    which is exact on the boundaries.

    Raises:
        InvalidArgumentError: non-finite boundary values or a norm whose V is
            not uniformly convex.
        ConvergenceFailure: the optimizer did not converge.
    """
    opts = opts or SolverOptions()
    if not (math.isfinite(bc_inner) and math.isfinite(bc_outer)):
        raise InvalidArgumentError("boundary values must be finite")
    _require_admissible(model)
    bc = [bc_inner if b.role == "inner" else bc_outer for b in domain.boundaries]

    if initial is None:
        inner = [b for b, bnd in enumerate(domain.boundaries) if bnd.role == "inner"]
        outer = [b for b, bnd in enumerate(domain.boundaries) if bnd.role == "outer"]
        if inner and outer:
            d_in = np.maximum(-domain.psi[inner].max(axis=0), 0.0)
            d_out = np.maximum(-domain.psi[outer].max(axis=0), 0.0)
            total = np.maximum(d_in + d_out, 1e-300)
            initial = (bc_inner * d_out + bc_outer * d_in) / total
        else:
            initial = np.full(domain.node_count, bc_outer if outer else bc_inner)

    scale = max(abs(bc_inner - bc_outer), 1.0)
    result_field, _ = _minimize(domain, model, bc, initial, opts, problem="dirichlet", scale=scale)
    _check_max_principle(result_field, min(bc_inner, bc_outer), max(bc_inner, bc_outer))
    return result_field


# =============================================================================
# Annulus between two Wulff spheres
# =============================================================================


def closed_form_annulus(h0: np.ndarray, r1: float, r2: float, dimension: int) -> np.ndarray:
    """Capacitary potential of r1 < H_0 < r2 with u = 1 inside and 0 outside."""
    h0 = np.asarray(h0, dtype=float)
    if dimension == 2:
        return np.log(r2 / h0) / math.log(r2 / r1)
    e = 2 - dimension
    return (h0 ** e - r2 ** e) / (r1 ** e - r2 ** e)


def ring_capacity(model: NormModel, r1: float, r2: float, grid=None) -> float:
    """N(N-2)|B_{H_0}(1)| / (r1^{2-N} - r2^{2-N}), the capacity of B_{H_0}(r1) in B_{H_0}(r2)."""
    n = model.dimension
    unit = volume(wulff_ball(model, 1.0), grid or sphere_grid(n))
    if n == 2:
        return n * unit / math.log(r2 / r1)
    return n * (n - 2) * unit / (r1 ** (2 - n) - r2 ** (2 - n))


def _axis_extent(model: NormModel) -> float:
    # B_{H_0}(1) reaches H(e_i) along axis i
    return float(np.max(model.h(np.eye(model.dimension))))


def annulus_domain(
    model: NormModel,
    r1: float,
    r2: float,
    grid: int | None = None,
    opts: SolverOptions | None = None,
) -> VoxelDomain:
    """Voxel domain of {r1 < H_0 < r2} on a cube enclosing B_{H_0}(r2)."""
    opts = opts or SolverOptions()
    if not (0.0 < r1 < r2):
        raise InvalidArgumentError(f"annulus radii must satisfy 0 < r1 < r2, got ({r1}, {r2})")
    n = grid or settings.DEFAULT_GRID
    axes = cube_axes(r2 * _axis_extent(model), n, model.dimension, opts.margin)
    h0 = model.dual(grid_coordinates(axes))
    boundaries = [
        Boundary("inner_wulff", lambda x: r1 - model.dual(x), role="inner", node_values=r1 - h0),
        Boundary("outer_wulff", lambda x: model.dual(x) - r2, role="outer", node_values=h0 - r2),
    ]
    domain = VoxelDomain.centered_cube(
        r2 * _axis_extent(model), n, boundaries, dimension=model.dimension, margin=opts.margin,
        theta_min=opts.theta_min,
    )
    domain.cached("h0", lambda: h0)
    return domain


def solve_annulus(
    model: NormModel,
    r1: float,
    r2: float,
    grid: int | None = None,
    opts: SolverOptions | None = None,
) -> ScalarField:
    """Annulus solve started from the closed form; metadata carries the sup error against it."""
    opts = opts or SolverOptions()
    _require_admissible(model)
    domain = annulus_domain(model, r1, r2, grid, opts)
    h0 = domain.cached("h0", lambda: model.dual(domain.coordinates()))
    exact = np.clip(closed_form_annulus(np.maximum(h0, 1e-300), r1, r2, model.dimension), 0.0, 1.0)
    result_field = solve_dirichlet(domain, model, 1.0, 0.0, opts, initial=exact)
    interior = domain.interior_nodes
    result_field.metadata["sup_error"] = float(np.max(np.abs(result_field.flat()[interior] - exact[interior])))
    result_field.metadata["radii"] = [r1, r2]
    if model.dimension > 2:
        e = 2 - model.dimension
        result_field.metadata["flux_linearization"] = [r1 ** e - r2 ** e, r2 ** e]
    return result_field


def relative_capacity(field_: ScalarField, model: NormModel) -> float:
    """Cap_H of the inner set relative to the outer one, int H(Du)^2 = 2 J(u)."""
    return 2.0 * energy(field_, model)


# =============================================================================
# Exterior capacity
# =============================================================================


@dataclass
class ExteriorSolution:
    """Truncated exterior solves for increasing R_out and their extrapolation."""

    body: ConvexBody
    model: NormModel
    radii: tuple[float, ...]
    fields: tuple[ScalarField, ...]
    caps: tuple[float, ...]
    field_extrapolated: ScalarField
    cap_extrapolated: float
    decay_constant: float
    inradius_h0: float
    outradius_h0: float
    cells_across: float
    convergence: list[dict] = field(default_factory=list)
    patch_fields: tuple[ScalarField, ...] = ()
    near_field: ScalarField | None = None
    coarse_cells_across: float | None = None

    @property
    def largest_field(self) -> ScalarField:
        return self.fields[-1]

    @property
    def boundary_field(self) -> ScalarField:
        """The finest extrapolated potential around the body (the patch when there is one)."""
        return self.near_field if self.near_field is not None else self.field_extrapolated

    @property
    def domain(self) -> VoxelDomain:
        return self.fields[-1].domain

    def convergence_summary(self) -> dict:
        return {
            "iters": int(sum(c["iterations"] for c in self.convergence)),
            "final_grad": float(max(c["final_grad"] for c in self.convergence)),
        }


def extrapolate_field(fields: Sequence[ScalarField], radii: Sequence[float], dimension: int) -> tuple[ScalarField, float]:
    """Remove the O(R^{2-N}) truncation error of the two largest solves.

    With a = R^{2-N} the truncated potential behaves like
    u_R = u - c a (1 - u_R), so c is fitted by least squares from the pair
    and u = u_R + c a (1 - u_R). The fit is exact for Wulff balls.
    """
    if len(fields) < 2:
        only = fields[-1]
        return only.with_values(only.values.copy(), kind="capacity_extrapolated"), 0.0
    (f1, f2), (ra, rb) = fields[-2:], radii[-2:]
    a1, a2 = ra ** (2 - dimension), rb ** (2 - dimension)
    u1, u2 = f1.flat(), f2.flat()
    h0 = f1.domain.cached("h0", lambda: np.zeros(f1.domain.node_count))
    nodes = f1.domain.interior_nodes
    near = h0[nodes] <= 0.5 * ra
    if np.any(near):
        nodes = nodes[near]
    d = a1 * (1.0 - u1[nodes]) - a2 * (1.0 - u2[nodes])
    denom = float(np.dot(d, d))
    c = float(np.dot(d, u2[nodes] - u1[nodes]) / denom) if denom > 0.0 else 0.0
    values = u2 + c * a2 * (1.0 - u2)
    return f2.with_values(values, kind="capacity_extrapolated", decay_constant=c), c


def extrapolate_capacity(values: Sequence[float], radii: Sequence[float], dimension: int) -> float:
    """Fit 1/Cap_R = 1/Cap - k R^{2-N} and return Cap."""
    caps = np.asarray(values, dtype=float)
    if caps.shape[0] < 2:
        return float(caps[-1])
    a = np.asarray(radii, dtype=float) ** (2 - dimension)
    design = np.stack([np.ones_like(a), -a], axis=1)
    (inv_cap, _), *_ = np.linalg.lstsq(design, 1.0 / caps, rcond=None)
    return float(1.0 / inv_cap)


def _exterior_initial(h0: np.ndarray, g: np.ndarray, r_out: float, dimension: int) -> np.ndarray:
    # Wulff profile through the body boundary along each ray
    e = 2 - dimension
    safe_h0 = np.maximum(h0, 1e-300)
    r_eff = np.where(g > 0.0, safe_h0 / np.maximum(g, 1e-300), safe_h0)
    profile = (safe_h0 ** e - r_out ** e) / np.maximum(r_eff ** e - r_out ** e, 1e-300)
    profile = np.clip(profile, 0.0, 1.0)
    profile[g <= 1.0] = 1.0
    profile[h0 >= r_out] = 0.0
    return profile


def _check_monotone(small: ScalarField, large: ScalarField, radii: tuple[float, float]) -> float:
    nodes = small.domain.interior_nodes
    worst = float(np.max(small.flat()[nodes] - large.flat()[nodes]))
    if worst > MONOTONICITY_TOL:
        logger.error(
            "truncation_not_monotone",
            radii=list(radii),
            max_violation=worst,
            message="Exterior solves decrease when the truncation radius grows",
        )
        raise SolverInconsistencyError(worst, radii)
    return max(worst, 0.0)


@dataclass(frozen=True)
class PatchPlan:
    """Near-body refinement: the region {H_0 < rho} outside the body on its own finer cube."""

    rho: float
    half_width: float
    nodes_per_axis: int
    spacing: float

    def cells_across(self, inradius: float) -> float:
        return inradius / self.spacing


def plan_patch(
    model: NormModel,
    outradius_h0: float,
    inradius: float,
    r_min: float,
    nodes_per_axis: int,
    opts: SolverOptions,
) -> PatchPlan:
    """Size the refinement patch so the inradius spans `opts.min_cells_across` cells.

    The patch boundary is the Wulff sphere H_0 = rho with
    rho = min(2 R_1, 0.8 min R_out); the patch grid has at least as many
    nodes per axis as the outer grid.

    Raises:
        InvalidArgumentError: the patch leaves fewer than two cells between
            the body and its boundary, or needs more than
            `settings.PATCH_MAX_GRID` nodes per axis.
    """
    target = inradius / opts.min_cells_across
    rho = min(PATCH_REACH * outradius_h0, PATCH_FILL * r_min)
    sigma, _ = model.equivalence_constants
    if rho - outradius_h0 < PATCH_GAP_CELLS * target / sigma:
        raise InvalidArgumentError(
            f"no room for a refinement patch between the body (H_0 <= {outradius_h0:.4g}) and "
            f"min R_out = {r_min}; enlarge the truncation radii"
        )
    half_width = rho * _axis_extent(model)
    needed = math.ceil(2.0 * half_width / target) + 1 + 2 * opts.margin
    n_patch = max(nodes_per_axis, needed)
    if n_patch > settings.PATCH_MAX_GRID:
        raise InvalidArgumentError(
            f"resolving the inradius by {opts.min_cells_across:g} cells needs a {n_patch}-node patch, "
            f"above PATCH_MAX_GRID = {settings.PATCH_MAX_GRID}"
        )
    spacing = 2.0 * half_width / (n_patch - 1 - 2 * opts.margin)
    return PatchPlan(rho=rho, half_width=half_width, nodes_per_axis=n_patch, spacing=spacing)


def _body_gauge(body: ConvexBody, model: NormModel, coords: np.ndarray, h0: np.ndarray) -> np.ndarray:
    if body.support is model and not np.any(body.center):
        return h0 / body.scale
    return gauge(body, coords)


def _convergence_entry(r_out: float, result: NCGResult, level: str) -> dict:
    return {
        "r_out": r_out,
        "level": level,
        "iterations": result.iterations,
        "final_grad": result.final_grad,
        "energy": result.energy,
        "stop_reason": result.reason,
    }


def _solve_patch(
    body: ConvexBody,
    model: NormModel,
    plan: PatchPlan,
    coarse_fields: Sequence[ScalarField],
    radii: Sequence[float],
    opts: SolverOptions,
) -> tuple[list[ScalarField], list[float], list[dict]]:
    """Fine solves on the patch with Dirichlet data sampled from the coarse fields.

    Returns the patch fields and, per radius, the capacity 2 (J_patch + J_rest)
    where J_rest is the coarse energy of the cells centered outside the patch.
    """
    n = model.dimension
    axes = cube_axes(plan.half_width, plan.nodes_per_axis, n, opts.margin)
    coords = grid_coordinates(axes)
    h0 = model.dual(coords)
    g = _body_gauge(body, model, coords, h0)
    fields: list[ScalarField] = []
    caps: list[float] = []
    convergence: list[dict] = []
    for r_out, coarse in zip(radii, coarse_fields):
        boundaries = [
            Boundary("body", lambda x: 1.0 - gauge(body, x), role="inner", node_values=1.0 - g),
            Boundary(
                "patch_wulff",
                lambda x: model.dual(x) - plan.rho,
                role="outer",
                node_values=h0 - plan.rho,
                data=coarse.sample,
            ),
        ]
        domain = VoxelDomain.centered_cube(
            plan.half_width, plan.nodes_per_axis, boundaries, dimension=n, margin=opts.margin,
            theta_min=opts.theta_min,
        )
        domain.cached("h0", lambda: h0)
        initial = np.clip(np.nan_to_num(coarse.sample(coords), nan=0.0), 0.0, 1.0)
        solved, result = _minimize(domain, model, [1.0, 0.0], initial, opts, problem="capacity_patch")
        _check_max_principle(solved, 0.0, 1.0)
        outside = model.dual(coarse.domain.cell_centers()) >= plan.rho
        rest = energy(coarse, model, cell_mask=outside)
        solved.metadata["r_out"] = r_out
        solved.metadata["patch_rho"] = plan.rho
        solved.metadata["outer_energy"] = rest
        fields.append(solved)
        caps.append(2.0 * (result.energy + rest))
        convergence.append(_convergence_entry(r_out, result, "patch"))
    return fields, caps, convergence


def solve_exterior_capacity(
    body: ConvexBody,
    model: NormModel,
    r_out_list: Sequence[float] | None = None,
    grid: int | None = None,
    opts: SolverOptions | None = None,
) -> ExteriorSolution:
    """Capacitary potential of the body: u = 1 on the body, u = 0 on H_0 = R_out.

    All truncation radii share one grid sized by the largest radius, so the
    solves can be compared nodewise. When that grid resolves the body's
    inradius by fewer than `opts.min_cells_across` cells, each radius is
    solved again on a finer patch around the body (see `plan_patch`) with
    boundary data from the outer solve, and the capacities combine the patch
    energy with the outer energy beyond it.

    Raises:
        UnsupportedDimensionError: N < 3 (the exterior problem has no decaying solution).
        InvalidArgumentError: the body does not fit in B_{H_0}(min R_out), or
            the requested resolution cannot be reached.
        SolverInconsistencyError: u_R decreases in R somewhere beyond 1e-8.
        ConvergenceFailure: an optimizer run did not converge.
    """
    opts = opts or SolverOptions()
    n = model.dimension
    if n < 3:
        raise UnsupportedDimensionError(n, "the exterior capacity problem needs N >= 3")
    if body.dimension != n:
        raise InvalidArgumentError(f"body dimension {body.dimension} does not match norm dimension {n}")
    if opts.min_cells_across < 0.0:
        raise InvalidArgumentError(f"min_cells_across must be >= 0, got {opts.min_cells_across}")
    _require_admissible(model)
    radii = tuple(sorted({float(r) for r in (r_out_list or DEFAULT_R_OUT)}))
    nodes_per_axis = grid or settings.DEFAULT_GRID

    cached = solve_cache.get("exterior", body.key(), model.key(), nodes_per_axis, radii, options=opts)
    if cached is not None:
        return cached.result

    r0, r1 = inradius_outradius_h0(body, model)
    if r1 >= radii[0]:
        raise InvalidArgumentError(
            f"body reaches H_0 = {r1:.4g}, it must lie inside B_H0(min R_out = {radii[0]})"
        )

    half_width = radii[-1] * _axis_extent(model)
    axes = cube_axes(half_width, nodes_per_axis, n, opts.margin)
    coords = grid_coordinates(axes)
    h0 = model.dual(coords)
    g = _body_gauge(body, model, coords, h0)
    spacing = float(axes[0][1] - axes[0][0])
    inradius = body.scale * float(np.min(body.support.h(sphere_grid(n).nodes)))
    coarse_cells = inradius / spacing

    plan = None
    if coarse_cells < opts.min_cells_across:
        plan = plan_patch(model, r1, inradius, radii[0], nodes_per_axis, opts)
        logger.info(
            "exterior_patch_planned",
            cells_across=coarse_cells,
            patch_cells_across=plan.cells_across(inradius),
            patch_grid=plan.nodes_per_axis,
            rho=plan.rho,
            message="Outer grid too coarse near the body, refining on a patch",
        )
    elif coarse_cells < MIN_CELLS_ACROSS:
        logger.warning(
            "exterior_grid_coarse",
            cells_across=coarse_cells,
            minimum=MIN_CELLS_ACROSS,
            grid=nodes_per_axis,
            message="The body inradius is resolved by fewer cells than recommended",
        )
    logger.info(
        "exterior_solve_started",
        body=body.label,
        norm=model.label,
        grid=nodes_per_axis,
        radii=list(radii),
        spacing=spacing,
        message="Solving truncated exterior problems",
    )

    fields: list[ScalarField] = []
    caps: list[float] = []
    convergence: list[dict] = []
    for r_out in radii:
        boundaries = [
            Boundary("body", lambda x: 1.0 - gauge(body, x), role="inner", node_values=1.0 - g),
            Boundary("outer_wulff", lambda x, r=r_out: model.dual(x) - r, role="outer", node_values=h0 - r_out),
        ]
        domain = VoxelDomain.centered_cube(
            half_width, nodes_per_axis, boundaries, dimension=n, margin=opts.margin, theta_min=opts.theta_min,
        )
        domain.cached("h0", lambda: h0)
        initial = _exterior_initial(h0, g, r_out, n)
        solved, result = _minimize(domain, model, [1.0, 0.0], initial, opts, problem="capacity")
        _check_max_principle(solved, 0.0, 1.0)
        solved.metadata["r_out"] = r_out
        solved.metadata["flux_linearization"] = [1.0, 0.0]
        fields.append(solved)
        caps.append(2.0 * result.energy)
        convergence.append(_convergence_entry(r_out, result, "outer"))

    for i in range(len(fields) - 1):
        _check_monotone(fields[i], fields[i + 1], (radii[i], radii[i + 1]))

    patch_fields: list[ScalarField] = []
    near = None
    cells_across = coarse_cells
    if plan is not None:
        patch_fields, caps, patch_convergence = _solve_patch(body, model, plan, fields, radii, opts)
        convergence.extend(patch_convergence)
        for i in range(len(patch_fields) - 1):
            _check_monotone(patch_fields[i], patch_fields[i + 1], (radii[i], radii[i + 1]))
        near, _ = extrapolate_field(patch_fields, radii, n)
        near.metadata["flux_linearization"] = [1.0, 0.0]
        cells_across = plan.cells_across(inradius)

    extrapolated, c = extrapolate_field(fields, radii, n)
    cap_inf = extrapolate_capacity(caps, radii, n)
    solution = ExteriorSolution(
        body=body,
        model=model,
        radii=radii,
        fields=tuple(fields),
        caps=tuple(caps),
        field_extrapolated=extrapolated,
        cap_extrapolated=cap_inf,
        decay_constant=c,
        inradius_h0=r0,
        outradius_h0=r1,
        cells_across=cells_across,
        convergence=convergence,
        patch_fields=tuple(patch_fields),
        near_field=near,
        coarse_cells_across=coarse_cells,
    )
    logger.info(
        "exterior_solve_finished",
        body=body.label,
        norm=model.label,
        caps=caps,
        cap_extrapolated=cap_inf,
        cells_across=cells_across,
        message="Exterior capacity solved",
    )
    solve_cache.set("exterior", body.key(), model.key(), nodes_per_axis, radii, solution, options=opts)
    return solution


def exterior_closed_form(h0: np.ndarray, r: float, dimension: int) -> np.ndarray:
    """Capacitary potential of B_{H_0}(r): (H_0 / r)^{2-N}."""
    return (np.asarray(h0, dtype=float) / r) ** (2 - dimension)


def sup_error(field_: ScalarField, exact: np.ndarray, mask: np.ndarray | None = None) -> float:
    """max |u - exact| over interior nodes (optionally restricted by a node mask)."""
    domain = field_.domain
    nodes = domain.interior_nodes
    if mask is not None:
        nodes = nodes[np.asarray(mask, dtype=bool).reshape(-1)[nodes]]
    if nodes.size == 0:
        raise InvalidArgumentError("no interior nodes selected for the error")
    exact = np.asarray(exact, dtype=float).reshape(-1)
    return float(np.max(np.abs(field_.flat()[nodes] - exact[nodes])))


# =============================================================================
# Torsion
# =============================================================================


def closed_form_torsion(h0: np.ndarray, r: float, dimension: int) -> np.ndarray:
    """(H_0^2 - r^2) / (2N), the torsion function of B_{H_0}(r)."""
    h0 = np.asarray(h0, dtype=float)
    return (h0 * h0 - r * r) / (2.0 * dimension)


def solve_torsion(
    body: ConvexBody,
    model: NormModel,
    grid: int | None = None,
    opts: SolverOptions | None = None,
) -> ScalarField:
    """Minimize int (V(D psi) + psi) with psi = 0 on the boundary of the body.

    The minimizer solves Delta_H psi = 1 and is negative inside.
    """
    opts = opts or SolverOptions()
    _require_admissible(model)
    n = model.dimension
    if body.dimension != n:
        raise InvalidArgumentError(f"body dimension {body.dimension} does not match norm dimension {n}")
    nodes_per_axis = grid or settings.DEFAULT_GRID

    cached = solve_cache.get("torsion", body.key(), model.key(), nodes_per_axis, (), options=opts)
    if cached is not None:
        return cached.result

    eye = np.eye(n)
    half_width = float(np.max(np.maximum(body.h(eye), body.h(-eye))))
    axes = cube_axes(half_width, nodes_per_axis, n, opts.margin)
    coords = grid_coordinates(axes)
    g = gauge(body, coords)
    boundaries = [Boundary("body", lambda x: gauge(body, x) - 1.0, role="outer", node_values=g - 1.0)]
    domain = VoxelDomain.centered_cube(
        half_width, nodes_per_axis, boundaries, dimension=n, margin=opts.margin, theta_min=opts.theta_min,
    )
    domain.cached("h0", lambda: model.dual(coords))
    scale = body.scale ** 2 / (2.0 * n)
    initial = np.minimum(scale * (g * g - 1.0), 0.0)
    solved, result = _minimize(domain, model, [0.0], initial, opts, problem="torsion", source=1.0, scale=scale)
    if body.support is model:
        exact = closed_form_torsion(model.dual(coords - body.center), body.scale, n)
        solved.metadata["sup_error"] = sup_error(solved, exact)
        solved.metadata["relative_sup_error"] = solved.metadata["sup_error"] / scale
    logger.info(
        "torsion_solved",
        body=body.label,
        norm=model.label,
        iterations=result.iterations,
        energy=result.energy,
        message="Torsion problem solved",
    )
    solve_cache.set("torsion", body.key(), model.key(), nodes_per_axis, (), solved, options=opts)
    return solved

"""Numeric dual norms, duality identity checks and equivalence constants.

The dual H_0(x) = sup <x, xi> / H(xi) is computed by multi-start sampling on
a fixed direction set followed by a batched projected Newton iteration on
the sphere. The objective f(xi) = <x, xi>/H(xi) is 0-homogeneous, so its
gradient is tangent to the sphere and the Newton system can be closed with
the radial projector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy import optimize

from finslercap.core.errors import ConvergenceFailure
from finslercap.core.logging_config import get_logger
from finslercap.geometry.sphere import random_directions, start_directions

if TYPE_CHECKING:
    from finslercap.norms.models import NormModel

logger = get_logger(__name__)

DUAL_TOLERANCE = 1e-10
_INTERNAL_TOLERANCE = 1e-14
_MAX_NEWTON_ITERS = 60
_MAX_HALVINGS = 40
_MAX_STEP = 0.5
_CHUNK = 8192


@dataclass(frozen=True)
class DualSolution:
    """Result of a batched dual evaluation."""

    value: np.ndarray
    argmax: np.ndarray
    first_order: np.ndarray
    iterations: int


def _objective(model: "NormModel", x: np.ndarray, xi: np.ndarray):
    hx = model.h(xi)
    g = model.grad_h(xi)
    ip = np.einsum("ki,ki->k", x, xi)
    f = ip / hx
    grad_f = x / hx[:, None] - (ip / hx ** 2)[:, None] * g
    return hx, g, ip, f, grad_f


def _newton(model: "NormModel", x: np.ndarray, xi: np.ndarray):
    n = x.shape[1]
    eye = np.eye(n)
    active = np.ones(x.shape[0], dtype=bool)
    hx, g, ip, f, grad_f = _objective(model, x, xi)
    proj = eye - xi[:, :, None] * xi[:, None, :]
    gr = np.einsum("kij,kj->ki", proj, grad_f)
    rel = np.linalg.norm(gr, axis=1) / np.maximum(np.abs(f), 1e-300)
    iters = 0
    for iters in range(1, _MAX_NEWTON_ITERS + 1):
        active = rel > _INTERNAL_TOLERANCE
        if not np.any(active):
            break
        idx = np.flatnonzero(active)
        xa, xia = x[idx], xi[idx]
        hxa, ga, ipa, fa, gfa = hx[idx], g[idx], ip[idx], f[idx], grad_f[idx]
        hh = model.hess_h(xia)
        outer_xg = xa[:, :, None] * ga[:, None, :]
        hess_f = (
            -(outer_xg + np.swapaxes(outer_xg, 1, 2)) / (hxa ** 2)[:, None, None]
            + 2.0 * (ipa / hxa ** 3)[:, None, None] * ga[:, :, None] * ga[:, None, :]
            - (ipa / hxa ** 2)[:, None, None] * hh
        )
        pa = proj[idx]
        m = -pa @ hess_f @ pa
        lam_min = np.linalg.eigvalsh(m)[:, 0]
        shift = np.where(lam_min <= 1e-8 * np.abs(fa), np.abs(lam_min) + 1e-3 * np.abs(fa), 0.0)
        system = m + shift[:, None, None] * pa + xia[:, :, None] * xia[:, None, :]
        step = np.linalg.solve(system, gr[idx][:, :, None])[:, :, 0]
        length = np.linalg.norm(step, axis=1)
        step *= np.minimum(1.0, _MAX_STEP / np.maximum(length, 1e-300))[:, None]

        t = np.ones(idx.shape[0])
        accepted = np.zeros(idx.shape[0], dtype=bool)
        new_xi = xia.copy()
        for _ in range(_MAX_HALVINGS):
            pending = ~accepted
            if not np.any(pending):
                break
            trial = xia[pending] + t[pending, None] * step[pending]
            trial /= np.linalg.norm(trial, axis=1, keepdims=True)
            f_trial = np.einsum("ki,ki->k", xa[pending], trial) / model.h(trial)
            ok = f_trial >= fa[pending] - 1e-15 * np.abs(fa[pending])
            sel = np.flatnonzero(pending)[ok]
            new_xi[sel] = trial[ok]
            accepted[sel] = True
            t[pending] *= 0.5
        xi[idx] = new_xi
        hx_n, g_n, ip_n, f_n, gf_n = _objective(model, xa, new_xi)
        hx[idx], g[idx], ip[idx], f[idx], grad_f[idx] = hx_n, g_n, ip_n, f_n, gf_n
        proj[idx] = eye - new_xi[:, :, None] * new_xi[:, None, :]
        gr[idx] = np.einsum("kij,kj->ki", proj[idx], gf_n)
        rel_new = np.linalg.norm(gr[idx], axis=1) / np.maximum(np.abs(f_n), 1e-300)
        # a rejected step means we are at the resolution limit of f
        rel_new = np.where(accepted, rel_new, np.minimum(rel_new, rel[idx]))
        stalled = ~accepted
        rel[idx] = np.where(stalled & (rel_new <= DUAL_TOLERANCE), 0.0, rel_new)
    return xi, f, rel, iters


def numeric_dual(
    model: "NormModel",
    x: np.ndarray,
    n_starts: int = 2,
    tol: float = DUAL_TOLERANCE,
) -> DualSolution:
    """Evaluate H_0 at one point or a batch of points by numeric maximization.

    Raises:
        ConvergenceFailure: if the first-order condition is not met to `tol`
            at some point; `best_bracket` carries (lower, estimated upper)
            bounds for the worst point.
    """
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1]
    n = x.shape[-1]
    flat = x.reshape(-1, n)
    norms = np.linalg.norm(flat, axis=1)
    value = np.zeros(flat.shape[0])
    argmax = np.zeros_like(flat)
    argmax[:, 0] = 1.0
    first_order = np.zeros(flat.shape[0])
    max_iters = 0

    starts = start_directions(n)
    h_starts = model.h(starts)
    nz = np.flatnonzero(norms > 0.0)
    for lo in range(0, nz.shape[0], _CHUNK):
        sel = nz[lo:lo + _CHUNK]
        xs = flat[sel] / norms[sel, None]
        scores = (xs @ starts.T) / h_starts[None, :]
        order = np.argsort(-scores, axis=1, kind="stable")[:, :n_starts]
        best_f = np.full(sel.shape[0], -np.inf)
        best_xi = np.zeros_like(xs)
        best_rel = np.full(sel.shape[0], np.inf)
        for s in range(order.shape[1]):
            xi0 = starts[order[:, s]].copy()
            xi, f, rel, iters = _newton(model, xs, xi0)
            max_iters = max(max_iters, iters)
            better = f > best_f
            best_f = np.where(better, f, best_f)
            best_xi[better] = xi[better]
            best_rel = np.where(better, rel, best_rel)
        value[sel] = best_f * norms[sel]
        argmax[sel] = best_xi
        first_order[sel] = best_rel

    worst = int(np.argmax(first_order)) if first_order.size else 0
    if first_order.size and first_order[worst] > tol:
        lower = float(value[worst])
        upper = float(value[worst] * (1.0 + first_order[worst]))
        logger.error(
            "dual_norm_not_converged",
            points=int(np.sum(first_order > tol)),
            worst_first_order=float(first_order[worst]),
            norm=model.label,
            message="Numeric dual norm failed to meet its first-order tolerance",
        )
        raise ConvergenceFailure(
            f"numeric dual of {model.label} did not converge (first-order residual "
            f"{first_order[worst]:.3e} > {tol:.1e})",
            residual_history=[float(first_order[worst])],
            best_bracket=(lower, upper),
        )
    return DualSolution(
        value=value.reshape(shape),
        argmax=argmax.reshape(shape + (n,)),
        first_order=first_order.reshape(shape),
        iterations=max_iters,
    )


# =============================================================================
# Duality identities
# =============================================================================


@dataclass
class IdentityReport:
    """Max residuals of the duality identities over random samples."""

    norm: str
    family: str
    sample_count: int
    h0_of_grad_h: float
    h_of_grad_h0: float
    inverse_map: float
    hessian_inverse: float | None
    euler: float
    hessian_kernel: float
    hessian_inverse_skipped: bool = False
    notes: list[str] = field(default_factory=list)

    def max_residual(self) -> float:
        values = [self.h0_of_grad_h, self.h_of_grad_h0, self.inverse_map, self.euler, self.hessian_kernel]
        if self.hessian_inverse is not None:
            values.append(self.hessian_inverse)
        return float(max(values))


def check_duality_identities(model: "NormModel", sample_count: int = 1000, seed: int = 0) -> IdentityReport:
    """Residuals of H_0(grad H) = 1, H(grad H_0) = 1, H grad H_0(grad H) = xi,
    hess V(xi) hess V_0(grad H(xi)) = Id, and the Euler relations."""
    rng = np.random.default_rng(seed)
    n = model.dimension
    radii = rng.uniform(0.5, 2.0, size=(sample_count, 1))
    xi = random_directions(n, sample_count, rng) * radii
    x = random_directions(n, sample_count, rng) * rng.uniform(0.5, 2.0, size=(sample_count, 1))

    h = model.h(xi)
    g = model.grad_h(xi)
    hh = model.hess_h(xi)
    euler = np.abs(np.einsum("ki,ki->k", g, xi) - h) / h
    kernel = np.linalg.norm(np.einsum("kij,kj->ki", hh, xi), axis=1) / np.linalg.norm(g, axis=1)

    r1 = np.abs(model.dual(g) - 1.0)
    r2 = np.abs(model.h(model.grad_dual(x)) - 1.0)
    back = h[:, None] * model.grad_dual(g)
    r3 = np.linalg.norm(back - xi, axis=1) / np.linalg.norm(xi, axis=1)

    notes: list[str] = []
    skipped = not model.is_c2
    hessian_inverse: float | None = None
    if skipped:
        notes.append("hessian identity skipped: second derivatives are interpolated")
        logger.warning(
            "duality_hessian_check_skipped",
            norm=model.label,
            message="Norm is not C2; skipping the Hessian inverse identity",
        )
    else:
        prod = model.hess_v(xi) @ model.hess_v_dual(g)
        hessian_inverse = float(np.abs(prod - np.eye(n)).max())

    report = IdentityReport(
        norm=model.label,
        family=model.family.value,
        sample_count=sample_count,
        h0_of_grad_h=float(r1.max()),
        h_of_grad_h0=float(r2.max()),
        inverse_map=float(r3.max()),
        hessian_inverse=hessian_inverse,
        euler=float(euler.max()),
        hessian_kernel=float(kernel.max()),
        hessian_inverse_skipped=skipped,
        notes=notes,
    )
    logger.debug(
        "duality_identities_checked",
        norm=model.label,
        max_residual=report.max_residual(),
        message="Duality identities evaluated",
    )
    return report


# =============================================================================
# Equivalence constants
# =============================================================================


def equivalence_constants(model: "NormModel", sample_count: int = 2048, seed: int = 0) -> tuple[float, float]:
    """(sigma, gamma): min and max of H on the Euclidean unit sphere.

    Sampling on `sample_count` random directions, then BFGS refinement of the
    0-homogeneous ratio H(xi)/|xi| from the best samples.
    """
    rng = np.random.default_rng(seed)
    dirs = random_directions(model.dimension, sample_count, rng)
    vals = model.h(dirs)

    def ratio(xi: np.ndarray, sign: float):
        r = np.linalg.norm(xi)
        hv = float(model.h(xi))
        grad = model.grad_h(xi) / r - hv * xi / r ** 3
        return sign * hv / r, sign * grad

    lo = optimize.minimize(ratio, dirs[int(np.argmin(vals))], args=(1.0,), jac=True, method="BFGS",
                           options={"gtol": 1e-12})
    hi = optimize.minimize(ratio, dirs[int(np.argmax(vals))], args=(-1.0,), jac=True, method="BFGS",
                           options={"gtol": 1e-12})
    sigma = float(min(vals.min(), lo.fun))
    gamma = float(max(vals.max(), -hi.fun))
    return sigma, gamma

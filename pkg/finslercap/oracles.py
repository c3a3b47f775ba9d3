"""Brute-force oracles for cross-checking the quadrature and duality code.

Each oracle reaches its number by a different route than the primary
implementation: polynomial fits of triangulated Minkowski-sum volumes
instead of mixed discriminants, zooming direction samples instead of
projected Newton, membership counting instead of surface quadrature, and
flat triangles instead of the Gauss-map parametrization.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from math import pi
from typing import Sequence

import numpy as np

from finslercap.core.config import settings
from finslercap.core.errors import InvalidArgumentError, UnsupportedDimensionError
from finslercap.core.logging_config import get_logger
from finslercap.geometry.bodies import ConvexBody
from finslercap.geometry.sphere import icosphere, random_directions, tangent_frame
from finslercap.norms.models import NormModel

logger = get_logger(__name__)

FIT_CONDITION_MAX = 1e8
DUAL_GLOBAL_LEVEL = 3
DUAL_CAP_RADIUS = 0.1
DUAL_CAP_SHRINK = 4.0
DUAL_CAP_POINTS = 15
MC_COARSE_LEVEL = 3
MC_ZOOM_STEPS = 4
MC_CHUNK = 8192
DEFAULT_LAMBDAS = (0.0, 0.5, 1.0, 1.5, 2.0)
FIT_MESH_THETA = 128
FIT_MESH_PHI = 256
MESH_RICHARDSON_LEVELS = 2


# =============================================================================
# Mixed volumes by polynomial fit
# =============================================================================


@dataclass
class MixedVolumeFit:
    v_lkk: float
    v_llk: float
    volume_k: float
    volume_l: float
    condition: float
    rescaled: bool
    residual: float

    def to_dict(self) -> dict:
        return {
            "V_LKK": self.v_lkk,
            "V_LLK": self.v_llk,
            "volume_K": self.volume_k,
            "volume_L": self.volume_l,
            "condition": self.condition,
            "rescaled": self.rescaled,
            "residual": self.residual,
        }


def mixed_volumes_by_fit(
    body_k: ConvexBody,
    body_l: ConvexBody,
    lambdas: Sequence[float] = DEFAULT_LAMBDAS,
    n_theta: int = FIT_MESH_THETA,
    n_phi: int = FIT_MESH_PHI,
) -> MixedVolumeFit:
    """Fit |K + t L| = |K| + 3t V(L,K,K) + 3t^2 V(L,L,K) + t^3 |L| for N = 3.

    Each |K + t L| is the volume of the triangulated boundary x_K + t x_L,
    extrapolated over successively halved meshes (see `mesh_volume`), so
    no value comes from the Gauss-map quadrature.
    """
    if body_k.dimension != 3 or body_l.dimension != 3:
        raise UnsupportedDimensionError(body_k.dimension, "the mixed-volume fit is written for N = 3")
    t = np.asarray(lambdas, dtype=float)
    if t.shape[0] < 4 or np.any(t < 0.0) or np.unique(t).shape[0] < 4:
        raise InvalidArgumentError("need at least four distinct nonnegative lambdas")
    vols = np.array([
        _combination_volume([body_k, body_l], [1.0, float(ti)], n_theta, n_phi, MESH_RICHARDSON_LEVELS) for ti in t
    ])

    def fit(ts: np.ndarray) -> tuple[np.ndarray, float, float]:
        design = np.stack([np.ones_like(ts), 3.0 * ts, 3.0 * ts ** 2, ts ** 3], axis=1)
        coeffs, *_ = np.linalg.lstsq(design, vols, rcond=None)
        resid = float(np.abs(design @ coeffs - vols).max() / np.abs(vols).max())
        return coeffs, float(np.linalg.cond(design)), resid

    coeffs, cond, resid = fit(t)
    rescaled = False
    if cond > FIT_CONDITION_MAX:
        s = float(np.abs(t).max())
        scaled_coeffs, cond, resid = fit(t / s)
        coeffs = scaled_coeffs / s ** np.arange(4)
        rescaled = True
        logger.warning(
            "mixed_volume_fit_rescaled",
            scale=s,
            condition=cond,
            message="Vandermonde system ill-conditioned; refitted with rescaled lambdas",
        )
    return MixedVolumeFit(
        v_lkk=float(coeffs[1]),
        v_llk=float(coeffs[2]),
        volume_k=float(coeffs[0]),
        volume_l=float(coeffs[3]),
        condition=cond,
        rescaled=rescaled,
        residual=resid,
    )


# =============================================================================
# Dual norm by zooming direction samples
# =============================================================================


def _global_directions(dimension: int, rng: np.random.Generator) -> np.ndarray:
    if dimension == 3:
        return icosphere(DUAL_GLOBAL_LEVEL)
    if dimension == 2:
        lon = 2.0 * pi * np.arange(720) / 720
        return np.stack([np.cos(lon), np.sin(lon)], axis=-1)
    axes = np.vstack([np.eye(dimension), -np.eye(dimension)])
    return np.vstack([axes, random_directions(dimension, 4096, rng)])


def _cap(center: np.ndarray, radius: float, rng: np.random.Generator) -> np.ndarray:
    n = center.shape[0]
    frame = tangent_frame(center[None, :])[0]
    if n - 1 <= 2:
        s = np.linspace(-1.0, 1.0, DUAL_CAP_POINTS)
        offsets = np.array(np.meshgrid(*([s] * (n - 1)), indexing="ij")).reshape(n - 1, -1).T
    else:
        offsets = rng.uniform(-1.0, 1.0, size=(DUAL_CAP_POINTS ** 2, n - 1))
    pts = center[None, :] + radius * offsets @ frame.T
    return pts / np.linalg.norm(pts, axis=1, keepdims=True)


def dual_norm_levels(model: NormModel, x, refinement_levels: int = 4, seed: int = 0) -> list[float]:
    """Running maxima of <x, xi>/H(xi) after the global sample and each zoom level."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != model.dimension:
        raise InvalidArgumentError(f"x must have {model.dimension} components")
    if not np.any(x):
        raise InvalidArgumentError("x must be nonzero")
    rng = np.random.default_rng(np.random.SeedSequence([seed, model.dimension]))

    def ratio(xi: np.ndarray) -> np.ndarray:
        return (xi @ x) / model.h(xi)

    dirs = _global_directions(model.dimension, rng)
    vals = ratio(dirs)
    k = int(np.argmax(vals))
    best, best_dir = float(vals[k]), dirs[k]
    levels = [best]
    radius = DUAL_CAP_RADIUS
    for _ in range(refinement_levels):
        pts = _cap(best_dir, radius, rng)
        vals = ratio(pts)
        k = int(np.argmax(vals))
        if vals[k] > best:
            best, best_dir = float(vals[k]), pts[k]
        levels.append(best)
        radius /= DUAL_CAP_SHRINK
    return levels


def dual_norm_by_sampling(model: NormModel, x, refinement_levels: int = 4, seed: int = 0) -> float:
    """H_0(x) as the maximum of <x, xi>/H(xi) over nested direction samples."""
    return dual_norm_levels(model, x, refinement_levels, seed)[-1]


# =============================================================================
# Monte-Carlo volume
# =============================================================================


def _bounding_box(body: ConvexBody) -> tuple[np.ndarray, np.ndarray]:
    eye = np.eye(body.dimension)
    return -body.h(-eye), body.h(eye)


def _support_gap(body: ConvexBody, points: np.ndarray, dirs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # max over dirs of <x, theta> - h(theta), and the maximizing direction
    gap = points @ dirs.T - body.h(dirs)[None, :]
    k = np.argmax(gap, axis=1)
    return gap[np.arange(points.shape[0]), k], dirs[k]


def _inside(body: ConvexBody, points: np.ndarray, coarse: np.ndarray, spacing: float, reach: float) -> np.ndarray:
    gap, best = _support_gap(body, points, coarse)
    band = reach * spacing ** 2
    inside = gap <= -band
    unsure = np.flatnonzero((gap > -band) & (gap <= 0.0))
    radius = spacing
    for _ in range(MC_ZOOM_STEPS):
        if unsure.size == 0:
            break
        still = []
        for i in unsure:
            cand = _cap(best[i], radius, np.random.default_rng(0))
            g, d = _support_gap(body, points[i:i + 1], cand)
            if g[0] > gap[i]:
                gap[i], best[i] = g[0], d[0]
            if gap[i] <= 0.0:
                still.append(i)
        unsure = np.asarray(still, dtype=np.int64)
        radius /= DUAL_CAP_SHRINK
    inside[unsure] = True
    return inside


def montecarlo_volume(
    body: ConvexBody,
    n_points: int = 1_000_000,
    seed: int = 0,
    shards: int | None = None,
) -> tuple[float, float]:
    """(estimate, standard error) of |Omega| by uniform sampling of its bounding box.

    A point is inside when <x, theta> <= h(theta) for all directions theta;
    points close to the boundary get zooming direction samples around
    their most violated direction. Shards use spawned seeds and are merged
    in order, so the result does not depend on the thread count.
    """
    if body.dimension != 3:
        raise UnsupportedDimensionError(body.dimension, "the Monte-Carlo oracle is written for N = 3")
    if n_points < 1:
        raise InvalidArgumentError("n_points must be positive")
    lo, hi = _bounding_box(body)
    box = float(np.prod(hi - lo))
    coarse = icosphere(MC_COARSE_LEVEL)
    spacing = 1.2 * np.arccos(np.clip(np.max(coarse[1:] @ coarse[0]), -1.0, 1.0))
    reach = float(np.abs(body.h(coarse)).max()) * 4.0
    shards = shards or max(1, settings.THREADS)
    sizes = [n_points // shards + (1 if s < n_points % shards else 0) for s in range(shards)]
    seeds = np.random.SeedSequence(seed).spawn(shards)

    def count(shard: int) -> int:
        rng = np.random.default_rng(seeds[shard])
        hits = 0
        remaining = sizes[shard]
        while remaining > 0:
            m = min(MC_CHUNK, remaining)
            pts = lo + (hi - lo) * rng.random((m, 3))
            hits += int(np.count_nonzero(_inside(body, pts, coarse, spacing, reach)))
            remaining -= m
        return hits

    with ThreadPoolExecutor(max_workers=max(1, settings.THREADS)) as pool:
        hits = sum(pool.map(count, range(shards)))
    p = hits / n_points
    estimate = box * p
    stderr = box * float(np.sqrt(p * (1.0 - p) / n_points))
    logger.info(
        "montecarlo_volume",
        body=body.label,
        points=n_points,
        estimate=estimate,
        stderr=stderr,
        message="Monte-Carlo volume estimate",
    )
    return estimate, stderr


# =============================================================================
# Triangulated boundary
# =============================================================================


@lru_cache(maxsize=16)
def _lat_long_mesh(n_theta: int, n_phi: int) -> tuple[np.ndarray, np.ndarray]:
    """Directions and triangles of a latitude-longitude sphere mesh with a vertex at each pole."""
    colat = np.pi * np.arange(1, n_theta) / n_theta
    lon = 2.0 * np.pi * np.arange(n_phi) / n_phi
    c, lo_ = np.meshgrid(colat, lon, indexing="ij")
    ring_dirs = np.stack([np.sin(c) * np.cos(lo_), np.sin(c) * np.sin(lo_), np.cos(c)], axis=-1).reshape(-1, 3)
    dirs = np.vstack([[0.0, 0.0, 1.0], ring_dirs, [0.0, 0.0, -1.0]])
    south = dirs.shape[0] - 1
    k = np.arange(n_phi)
    k1 = (k + 1) % n_phi
    last = 1 + (n_theta - 2) * n_phi
    caps = [
        np.stack([np.zeros(n_phi, dtype=np.int64), 1 + k, 1 + k1], axis=1),
        np.stack([np.full(n_phi, south), last + k1, last + k], axis=1),
    ]
    j = np.arange(n_theta - 2)[:, None]
    a, b = 1 + j * n_phi + k, 1 + j * n_phi + k1
    cc, d = a + n_phi, b + n_phi
    bands = [np.stack([a, cc, b], axis=-1).reshape(-1, 3), np.stack([b, cc, d], axis=-1).reshape(-1, 3)]
    return dirs, np.vstack(caps + bands)


def _enclosed_volume(verts: np.ndarray, tri: np.ndarray, center: np.ndarray) -> float:
    rel = [verts[tri[:, i]] - center for i in range(3)]
    return float(abs(np.einsum("ki,ki->k", rel[0], np.cross(rel[1], rel[2])).sum()) / 6.0)


def _combination_volume(
    bodies: Sequence[ConvexBody],
    weights: Sequence[float],
    n_theta: int,
    n_phi: int,
    levels: int,
) -> float:
    # x(theta) of sum w_i K_i is sum w_i x_i(theta)
    if n_theta % 2 ** levels or n_phi % 2 ** levels:
        raise InvalidArgumentError(f"mesh {n_theta} x {n_phi} cannot be halved {levels} times")
    if n_theta // 2 ** levels < 4 or n_phi // 2 ** levels < 8:
        raise InvalidArgumentError(f"mesh {n_theta} x {n_phi} is too coarse for {levels} halvings")
    center = sum(w * b.center for b, w in zip(bodies, weights))
    estimates = []
    for level in range(levels, -1, -1):
        dirs, tri = _lat_long_mesh(n_theta // 2 ** level, n_phi // 2 ** level)
        verts = sum(w * b.boundary_point(dirs) for b, w in zip(bodies, weights))
        estimates.append(_enclosed_volume(verts, tri, center))
    # Richardson: the inscribed-polyhedron error is a series in even powers of the mesh width
    for j in range(1, levels + 1):
        factor = 4.0 ** j - 1.0
        estimates = [fine + (fine - coarse) / factor for coarse, fine in zip(estimates[:-1], estimates[1:])]
    return estimates[-1]


def mesh_volume(
    body: ConvexBody,
    n_theta: int = FIT_MESH_THETA,
    n_phi: int = FIT_MESH_PHI,
    levels: int = MESH_RICHARDSON_LEVELS,
) -> float:
    """|Omega| from flat tetrahedra on the boundary mesh, Richardson-extrapolated over `levels` halvings."""
    if body.dimension != 3:
        raise UnsupportedDimensionError(body.dimension, "the mesh oracle is written for N = 3")
    return _combination_volume([body], [1.0], n_theta, n_phi, levels)


def mesh_surface_integrals(body: ConvexBody, model: NormModel, n_theta: int = 64, n_phi: int = 128) -> dict:
    """Volume and anisotropic perimeter of the triangulated boundary x(theta).

    Volume sums signed tetrahedra against the center; the perimeter sums
    H(n_T) area_T over the flat triangles.
    """
    if body.dimension != 3:
        raise UnsupportedDimensionError(body.dimension, "the mesh oracle is written for N = 3")
    dirs, tri = _lat_long_mesh(n_theta, n_phi)
    verts = body.boundary_point(dirs)
    p0, p1, p2 = verts[tri[:, 0]], verts[tri[:, 1]], verts[tri[:, 2]]
    cross = np.cross(p1 - p0, p2 - p0)
    area2 = np.linalg.norm(cross, axis=1)
    normals = cross / np.maximum(area2, 1e-300)[:, None]
    perimeter = float(np.sum(0.5 * area2 * model.h(normals)))
    return {"volume": _enclosed_volume(verts, tri, body.center), "perimeter": perimeter, "triangles": int(tri.shape[0])}

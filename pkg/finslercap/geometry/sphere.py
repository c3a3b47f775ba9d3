"""Quadrature grids and direction sets on the unit sphere S^{N-1}."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import gamma, pi

import numpy as np
from scipy import special

from finslercap.core.errors import InvalidArgumentError

POLE_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Quadrature nodes, weights and orthonormal tangent frames on S^{N-1}.

    For N = 3 the rule is Gauss-Legendre in cos(colatitude) times the
    trapezoid rule in longitude; nodes are ordered colatitude-major so that
    `values.reshape(n_pol, n_az)` recovers the product layout. Other
    dimensions use a product Gauss-Jacobi rule in hyperspherical angles.
    """

    dimension: int
    nodes: np.ndarray
    weights: np.ndarray
    frames: np.ndarray
    orders: tuple[int, ...]
    colatitudes: np.ndarray | None = None
    longitudes: np.ndarray | None = None

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    def integrate(self, values: np.ndarray) -> float | np.ndarray:
        """Quadrature of nodal values over the sphere (last axis is the node axis)."""
        return np.sum(self.weights * values, axis=-1)

    def refined(self) -> "SphereGrid":
        """The grid with every quadrature order doubled."""
        return sphere_grid(self.dimension, *[2 * o for o in self.orders])

    def quadrature_check(self) -> dict:
        """Relative error of the total weight and size of the first moment."""
        area = sphere_area(self.dimension)
        first = np.abs(np.sum(self.weights[:, None] * self.nodes, axis=0)).max()
        return {
            "area_rel_error": float(abs(self.weights.sum() - area) / area),
            "first_moment": float(first),
        }


def sphere_area(dimension: int) -> float:
    """Surface area of S^{N-1}."""
    return 2.0 * pi ** (dimension / 2.0) / gamma(dimension / 2.0)


def spherical_frame(colat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    """(e_colat, e_lon) frames for N = 3, fixed (e1, e2) at the poles."""
    colat = np.asarray(colat, dtype=float)
    lon = np.asarray(lon, dtype=float)
    e_colat = np.stack(
        [np.cos(colat) * np.cos(lon), np.cos(colat) * np.sin(lon), -np.sin(colat)], axis=-1
    )
    e_lon = np.stack([-np.sin(lon), np.cos(lon), np.zeros_like(lon)], axis=-1)
    at_pole = np.abs(np.sin(colat)) < POLE_EPS
    if np.any(at_pole):
        e_colat[at_pole] = np.array([1.0, 0.0, 0.0])
        e_lon[at_pole] = np.array([0.0, 1.0, 0.0])
    return np.stack([e_colat, e_lon], axis=-1)


def householder_frame(theta: np.ndarray) -> np.ndarray:
    """Tangent frames from the Householder reflection taking e_N to theta."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    n = theta.shape[-1]
    v = theta.copy()
    v[:, -1] -= 1.0
    vv = np.einsum("ki,ki->k", v, v)
    frames = np.broadcast_to(np.eye(n), (theta.shape[0], n, n)).copy()
    ok = vv > POLE_EPS
    if np.any(ok):
        frames[ok] -= 2.0 * v[ok, :, None] * v[ok, None, :] / vv[ok, None, None]
    return frames[:, :, : n - 1]


def tangent_frame(theta: np.ndarray) -> np.ndarray:
    """Orthonormal tangent frame at arbitrary unit vectors (shape (K, N, N-1))."""
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    if theta.shape[-1] == 3:
        colat = np.arccos(np.clip(theta[:, 2], -1.0, 1.0))
        lon = np.arctan2(theta[:, 1], theta[:, 0])
        return spherical_frame(colat, lon)
    if theta.shape[-1] == 2:
        return np.stack([-theta[:, 1], theta[:, 0]], axis=-1)[:, :, None]
    return householder_frame(theta)


def _grid_3d(n_pol: int, n_az: int) -> SphereGrid:
    t, w = special.roots_legendre(n_pol)
    order = np.argsort(-t)  # ascending colatitude
    t, w = t[order], w[order]
    colat = np.arccos(t)
    lon = 2.0 * pi * np.arange(n_az) / n_az
    cc, ll = np.meshgrid(colat, lon, indexing="ij")
    nodes = np.stack(
        [np.sin(cc) * np.cos(ll), np.sin(cc) * np.sin(ll), np.cos(cc)], axis=-1
    ).reshape(-1, 3)
    weights = (w[:, None] * np.full(n_az, 2.0 * pi / n_az)[None, :]).reshape(-1)
    frames = spherical_frame(cc.reshape(-1), ll.reshape(-1))
    return SphereGrid(
        dimension=3,
        nodes=nodes,
        weights=weights,
        frames=frames,
        orders=(n_pol, n_az),
        colatitudes=colat,
        longitudes=lon,
    )


def _grid_circle(n_az: int) -> SphereGrid:
    lon = 2.0 * pi * np.arange(n_az) / n_az
    nodes = np.stack([np.cos(lon), np.sin(lon)], axis=-1)
    weights = np.full(n_az, 2.0 * pi / n_az)
    return SphereGrid(dimension=2, nodes=nodes, weights=weights,
                      frames=tangent_frame(nodes), orders=(n_az,))


def _grid_product(dimension: int, n_pol: int, n_az: int) -> SphereGrid:
    # angles phi_1..phi_{N-2} in [0, pi] with weight sin^{N-1-k}, last angle periodic
    axes_t: list[np.ndarray] = []
    axes_w: list[np.ndarray] = []
    for k in range(1, dimension - 1):
        alpha = (dimension - 2 - k) / 2.0
        t, w = special.roots_jacobi(n_pol, alpha, alpha)
        axes_t.append(t)
        axes_w.append(w)
    lon = 2.0 * pi * np.arange(n_az) / n_az
    mesh_t = np.meshgrid(*axes_t, lon, indexing="ij")
    mesh_w = np.meshgrid(*axes_w, np.full(n_az, 2.0 * pi / n_az), indexing="ij")
    weights = np.prod(np.stack([m.reshape(-1) for m in mesh_w]), axis=0)

    count = weights.shape[0]
    nodes = np.empty((count, dimension))
    sin_prod = np.ones(count)
    for k, mt in enumerate(mesh_t[:-1]):
        t = mt.reshape(-1)
        nodes[:, k] = sin_prod * t
        sin_prod = sin_prod * np.sqrt(np.clip(1.0 - t * t, 0.0, None))
    phi = mesh_t[-1].reshape(-1)
    nodes[:, dimension - 2] = sin_prod * np.cos(phi)
    nodes[:, dimension - 1] = sin_prod * np.sin(phi)
    nodes /= np.linalg.norm(nodes, axis=1, keepdims=True)
    return SphereGrid(
        dimension=dimension,
        nodes=nodes,
        weights=weights,
        frames=householder_frame(nodes),
        orders=(n_pol, n_az),
    )


@lru_cache(maxsize=32)
def sphere_grid(dimension: int, n_pol: int | None = None, n_az: int | None = None) -> SphereGrid:
    """Build (and memoize) the quadrature grid for S^{dimension-1}.

    Defaults come from settings for N = 3; higher dimensions use a coarser
    product rule since the node count grows exponentially.
    """
    from finslercap.core.config import settings

    if dimension < 2:
        raise InvalidArgumentError(f"sphere grids need dimension >= 2, got {dimension}")
    if dimension == 2:
        return _grid_circle(n_az or n_pol or settings.SPHERE_N_AZ)
    if dimension == 3:
        return _grid_3d(n_pol or settings.SPHERE_N_POL, n_az or settings.SPHERE_N_AZ)
    return _grid_product(dimension, n_pol or 16, n_az or 32)


def icosphere(level: int) -> np.ndarray:
    """Vertices of the level-times subdivided icosahedron, projected to S^2."""
    phi = (1.0 + 5.0 ** 0.5) / 2.0
    verts = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    points = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(level):
        midpoint: dict[tuple[int, int], int] = {}
        new_faces = []

        def mid(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoint:
                m = points[a] + points[b]
                points.append(m / np.linalg.norm(m))
                midpoint[key] = len(points) - 1
            return midpoint[key]

        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
        faces = new_faces
    return np.array(points)


def start_directions(dimension: int, count_hint: int = 162) -> np.ndarray:
    """Deterministic, roughly uniform direction set used as multi-start seeds.

    N = 3 uses an icosphere, N = 2 an equispaced circle and other dimensions
    the product-grid nodes plus the coordinate axes.
    """
    if dimension == 3:
        level = 0
        while 10 * 4 ** level + 2 < count_hint:
            level += 1
        return icosphere(level)
    if dimension == 2:
        lon = pi * np.arange(count_hint) / count_hint * 2.0
        return np.stack([np.cos(lon), np.sin(lon)], axis=-1)
    grid = sphere_grid(dimension, 4, 8)
    axes = np.vstack([np.eye(dimension), -np.eye(dimension)])
    return np.vstack([grid.nodes, axes])


def random_directions(dimension: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed unit vectors."""
    g = rng.standard_normal((count, dimension))
    return g / np.linalg.norm(g, axis=1, keepdims=True)

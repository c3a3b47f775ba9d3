"""Voxel domains with level-set boundaries and ghost-node Dirichlet data.

A domain is a uniform Cartesian grid together with a list of boundaries, each
given by a level-set function that is negative on the region side. Nodes are
classified as

- interior: strictly inside every level set and off the box faces (unknowns);
- ghost: non-interior corners of cells that touch the region; their values
  are extrapolated linearly from an interior partner through the boundary
  crossing, where the Dirichlet value is imposed;
- exterior: everything else.

The full nodal vector on the active nodes (interior first, then ghosts) is an
affine function of the unknowns, `full = P u + b(bc)`, with P a sparse matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from itertools import product
from typing import Any, Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.interpolate import RegularGridInterpolator

from finslercap.core.errors import ConstructionError, InvalidArgumentError
from finslercap.core.logging_config import get_logger

logger = get_logger(__name__)

THETA_MIN = 0.25
MIN_CELL_FRACTION = 0.05
BISECTION_STEPS = 30
SUBSAMPLES = 4
LEVELSET_GRAD_FLOOR = 1e-3
MIN_CELLS_ACROSS = 24

VALID_ROLES = ("inner", "outer")


class NodeClass(IntEnum):
    EXTERIOR = 0
    INTERIOR = 1
    GHOST = 2


@dataclass(frozen=True, eq=False)
class Boundary:
    """One Dirichlet boundary: the zero set of `levelset`, negative on the region side.

    `node_values` may carry the level set already evaluated on the grid nodes
    (flattened in C order) to avoid recomputing expensive gauges. With `data`
    the Dirichlet value varies along the boundary: it is evaluated at each
    ghost crossing and replaces the scalar boundary value of the solve.
    """

    name: str
    levelset: Callable[[np.ndarray], np.ndarray]
    role: str = "outer"
    node_values: np.ndarray | None = None
    data: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self) -> None:
        if self.role not in VALID_ROLES:
            raise InvalidArgumentError(f"boundary role must be one of {VALID_ROLES}, got '{self.role}'")


class VoxelDomain:
    """Uniform grid, node classification, ghost map and cut-cell fractions."""

    def __init__(
        self,
        lo: Sequence[float],
        spacing: float,
        shape: Sequence[int],
        boundaries: Sequence[Boundary],
        theta_min: float = THETA_MIN,
        min_fraction: float = MIN_CELL_FRACTION,
    ) -> None:
        self.lo = np.asarray(lo, dtype=float)
        self.spacing = float(spacing)
        self.shape = tuple(int(n) for n in shape)
        self.dimension = len(self.shape)
        if self.lo.shape != (self.dimension,):
            raise InvalidArgumentError("box origin and shape disagree on the dimension")
        if self.spacing <= 0.0 or min(self.shape) < 3:
            raise InvalidArgumentError(f"invalid grid: spacing={self.spacing}, shape={self.shape}")
        if not boundaries:
            raise InvalidArgumentError("a domain needs at least one boundary")
        self.boundaries = tuple(boundaries)
        self.theta_min = float(theta_min)
        self.min_fraction = float(min_fraction)
        self.axes = tuple(self.lo[i] + self.spacing * np.arange(n) for i, n in enumerate(self.shape))
        self.strides = tuple(int(s) for s in np.cumprod((1,) + self.shape[::-1][:-1])[::-1])
        self.node_count = int(np.prod(self.shape))
        self._cache: dict[str, np.ndarray] = {}

        self._classify()
        self._build_ghost_map()
        self._build_cells()
        self._validate_levelsets()
        logger.debug(
            "voxel_domain_built",
            shape=list(self.shape),
            spacing=self.spacing,
            interior=self.interior_count,
            ghosts=self.ghost_count,
            cells=int(self.cell_corners.shape[0]),
            message="Voxel domain classified",
        )

    # -- construction ---------------------------------------------------

    @classmethod
    def centered_cube(
        cls,
        half_width: float,
        n: int,
        boundaries: Sequence[Boundary],
        dimension: int = 3,
        margin: int = 2,
        **kwargs: Any,
    ) -> "VoxelDomain":
        """Cube of n nodes per axis covering [-half_width, half_width]^N plus `margin` cells."""
        lo, h = cube_geometry(half_width, n, margin)
        return cls(np.full(dimension, lo), h, (n,) * dimension, boundaries, **kwargs)

    def coordinates(self) -> np.ndarray:
        """All node coordinates, shape (node_count, N), C order."""
        if "coords" not in self._cache:
            self._cache["coords"] = grid_coordinates(self.axes)
        return self._cache["coords"]

    def _classify(self) -> None:
        coords = self.coordinates()
        psi = np.empty((len(self.boundaries), self.node_count))
        for b, bnd in enumerate(self.boundaries):
            vals = bnd.node_values if bnd.node_values is not None else bnd.levelset(coords)
            vals = np.asarray(vals, dtype=float).reshape(-1)
            if vals.shape[0] != self.node_count or not np.all(np.isfinite(vals)):
                raise ConstructionError(f"level set '{bnd.name}' is not finite on the grid")
            psi[b] = vals
        self.psi = psi
        multi = np.indices(self.shape).reshape(self.dimension, -1)
        self._multi = multi
        on_face = np.zeros(self.node_count, dtype=bool)
        for i, n in enumerate(self.shape):
            on_face |= (multi[i] == 0) | (multi[i] == n - 1)
        inside = np.all(psi < 0.0, axis=0)
        if np.any(inside & on_face):
            raise ConstructionError("the region reaches the faces of the grid box; enlarge the box")
        self.interior_mask = inside & ~on_face
        if not np.any(self.interior_mask):
            raise ConstructionError("the domain has no interior nodes at this resolution")

    def _corner_offsets(self) -> np.ndarray:
        # flat offset of corner o; bit i of o moves one node along axis i
        return np.array(
            [sum(self.strides[i] for i in range(self.dimension) if o >> i & 1) for o in range(2 ** self.dimension)]
        )

    def _cell_bases(self) -> np.ndarray:
        cell_multi = np.indices(tuple(n - 1 for n in self.shape)).reshape(self.dimension, -1)
        return np.ravel_multi_index(tuple(cell_multi), self.shape)

    def _build_ghost_map(self) -> None:
        bases = self._cell_bases()
        offsets = self._corner_offsets()
        interior = self.interior_mask
        count = np.zeros(bases.shape[0], dtype=np.int64)
        for off in offsets:
            count += interior[bases + off]
        active_bases = bases[count > 0]
        touched = np.zeros(self.node_count, dtype=bool)
        for off in offsets:
            touched[active_bases + off] = True
        ghost = touched & ~interior
        self._active_bases = active_bases

        self.interior_nodes = np.flatnonzero(interior)
        self.ghost_nodes = np.flatnonzero(ghost)
        self.interior_count = int(self.interior_nodes.shape[0])
        self.ghost_count = int(self.ghost_nodes.shape[0])
        self.active_nodes = np.concatenate([self.interior_nodes, self.ghost_nodes])
        self.compact_index = np.full(self.node_count, -1, dtype=np.int64)
        self.compact_index[self.active_nodes] = np.arange(self.active_nodes.shape[0])

        node_class = np.full(self.node_count, NodeClass.EXTERIOR, dtype=np.int8)
        node_class[self.interior_nodes] = NodeClass.INTERIOR
        node_class[self.ghost_nodes] = NodeClass.GHOST
        self.node_class = node_class

        g = self.ghost_nodes
        psi_g = self.psi[:, g]
        self.ghost_boundary = np.argmax(psi_g, axis=0)
        psi_own = psi_g[self.ghost_boundary, np.arange(g.shape[0])]
        g_multi = self._multi[:, g]

        best_theta = np.full(g.shape[0], -np.inf)
        best_partner = np.full(g.shape[0], -1, dtype=np.int64)
        settled = np.zeros(g.shape[0], dtype=bool)
        for level in range(1, self.dimension + 1):
            found = np.zeros(g.shape[0], dtype=bool)
            for d in product((-1, 0, 1), repeat=self.dimension):
                if sum(abs(c) for c in d) != level:
                    continue
                nb_multi = g_multi + np.asarray(d)[:, None]
                inb = np.all((nb_multi >= 0) & (nb_multi < np.asarray(self.shape)[:, None]), axis=0)
                nb = np.where(inb, g + int(np.dot(d, self.strides)), 0)
                ok = inb & interior[nb] & ~settled
                psi_nb = self.psi[self.ghost_boundary, nb]
                theta_est = np.where(ok, psi_nb / np.minimum(psi_nb - psi_own, -1e-300), -np.inf)
                better = ok & (theta_est > best_theta)
                best_theta[better] = theta_est[better]
                best_partner[better] = nb[better]
                found |= ok
            settled |= found
        if np.any(best_partner < 0):
            raise ConstructionError("ghost node without an interior partner; the grid is too coarse")
        self.ghost_partner = best_partner
        self.ghost_theta = self._bisect(g, best_partner)
        self._ghost_data = self._boundary_data(g, best_partner)

        inv_theta = 1.0 / self.ghost_theta
        n_act = self.active_nodes.shape[0]
        rows = np.concatenate([np.arange(self.interior_count), self.interior_count + np.arange(self.ghost_count)])
        cols = np.concatenate([np.arange(self.interior_count), self.compact_index[best_partner]])
        data = np.concatenate([np.ones(self.interior_count), 1.0 - inv_theta])
        self.prolongation = sparse.csr_matrix((data, (rows, cols)), shape=(n_act, self.interior_count))
        self._ghost_inv_theta = inv_theta

    def _bisect(self, ghosts: np.ndarray, partners: np.ndarray) -> np.ndarray:
        """Fraction along partner -> ghost where the ghost's boundary is crossed."""
        coords = self.coordinates()
        theta = np.ones(ghosts.shape[0])
        for b, bnd in enumerate(self.boundaries):
            sel = np.flatnonzero(self.ghost_boundary == b)
            if sel.size == 0:
                continue
            a = coords[partners[sel]]
            c = coords[ghosts[sel]]
            lo = np.zeros(sel.size)
            hi = np.ones(sel.size)
            exact = self.psi[b, ghosts[sel]] == 0.0
            for _ in range(BISECTION_STEPS):
                mid = 0.5 * (lo + hi)
                val = np.asarray(bnd.levelset(a + mid[:, None] * (c - a)), dtype=float)
                inside = val < 0.0
                lo = np.where(inside, mid, lo)
                hi = np.where(inside, hi, mid)
            theta[sel] = np.where(exact, 1.0, 0.5 * (lo + hi))
        return np.maximum(theta, self.theta_min)

    def _boundary_data(self, ghosts: np.ndarray, partners: np.ndarray) -> np.ndarray:
        """Prescribed values at the crossings of boundaries that carry data, NaN elsewhere."""
        out = np.full(ghosts.shape[0], np.nan)
        coords = self.coordinates()
        for b, bnd in enumerate(self.boundaries):
            sel = np.flatnonzero(self.ghost_boundary == b)
            if bnd.data is None or sel.size == 0:
                continue
            a = coords[partners[sel]]
            crossing = a + self.ghost_theta[sel, None] * (coords[ghosts[sel]] - a)
            vals = np.asarray(bnd.data(crossing), dtype=float).reshape(-1)
            if vals.shape[0] != sel.size or not np.all(np.isfinite(vals)):
                raise ConstructionError(f"boundary data of '{bnd.name}' is not finite at the crossings")
            out[sel] = vals
        return out

    def _build_cells(self) -> None:
        offsets = self._corner_offsets()
        bases = self._active_bases
        corner_nodes = bases[:, None] + offsets[None, :]
        self.cell_corners = self.compact_index[corner_nodes]
        psi_max = self.psi.max(axis=0)[corner_nodes]
        fraction = np.ones(bases.shape[0])
        cut = np.any(psi_max >= 0.0, axis=1)
        if np.any(cut):
            s = (np.arange(SUBSAMPLES) + 0.5) / SUBSAMPLES
            pts = np.array(list(product(s, repeat=self.dimension)))
            weights = np.ones((pts.shape[0], offsets.shape[0]))
            for o in range(offsets.shape[0]):
                for i in range(self.dimension):
                    weights[:, o] *= pts[:, i] if o >> i & 1 else 1.0 - pts[:, i]
            sub = psi_max[cut] @ weights.T
            fraction[cut] = np.maximum(np.mean(sub < 0.0, axis=1), self.min_fraction)
        self.cell_fraction = fraction

    def _validate_levelsets(self) -> None:
        extent = self.spacing * (max(self.shape) - 1)
        for b, bnd in enumerate(self.boundaries):
            nodes = self.ghost_nodes[self.ghost_boundary == b]
            if nodes.size == 0:
                continue
            psi_grid = self.psi[b].reshape(self.shape)
            grads = np.gradient(psi_grid, self.spacing)
            mag = np.sqrt(sum(g.reshape(-1)[nodes] ** 2 for g in grads))
            if mag.min() * extent < LEVELSET_GRAD_FLOOR:
                raise ConstructionError(
                    f"level set '{bnd.name}' has a vanishing gradient near its zero set "
                    f"(min |grad| = {mag.min():.3e})"
                )

    # -- queries --------------------------------------------------------

    def boundary_index(self, role: str) -> int | None:
        for b, bnd in enumerate(self.boundaries):
            if bnd.role == role:
                return b
        return None

    def ghost_offset(self, bc_values: Sequence[float]) -> np.ndarray:
        """b(bc): the constant part of the affine map to the active nodes."""
        bc = np.asarray(bc_values, dtype=float)
        if bc.shape != (len(self.boundaries),):
            raise InvalidArgumentError(f"expected {len(self.boundaries)} boundary values, got {bc.shape}")
        values = np.where(np.isnan(self._ghost_data), bc[self.ghost_boundary], self._ghost_data)
        out = np.zeros(self.active_nodes.shape[0])
        out[self.interior_count:] = values * self._ghost_inv_theta
        return out

    def prescribed_values(self, bc_values: Sequence[float]) -> np.ndarray:
        """Dirichlet values on every node, from the boundary whose level set is largest there."""
        bc = np.asarray(bc_values, dtype=float)
        owner = np.argmax(self.psi, axis=0)
        out = bc[owner]
        for b, bnd in enumerate(self.boundaries):
            if bnd.data is None:
                continue
            sel = np.flatnonzero((owner == b) & (self.node_class == NodeClass.EXTERIOR))
            if sel.size:
                out[sel] = np.asarray(bnd.data(self.coordinates()[sel]), dtype=float).reshape(-1)
        return out

    def expand(self, u: np.ndarray, bc_values: Sequence[float]) -> np.ndarray:
        """Active-node values (interior then ghosts) for unknowns u."""
        return self.prolongation @ u + self.ghost_offset(bc_values)

    def cells_across(self, length: float) -> float:
        return float(length / self.spacing)

    def cell_centers(self) -> np.ndarray:
        """Centers of the active cells, in the order of `cell_corners`."""
        return self.cached("cell_centers", lambda: self.coordinates()[self._active_bases] + 0.5 * self.spacing)

    def stencil_mask(self) -> np.ndarray:
        """1.0 on interior and ghost nodes, 0.0 elsewhere (grid shaped)."""
        return (self.node_class != NodeClass.EXTERIOR).astype(float).reshape(self.shape)

    def cached(self, key: str, compute: Callable[[], np.ndarray]) -> np.ndarray:
        """Memoize a node array (e.g. H_0 on the grid) on this domain."""
        if key not in self._cache:
            self._cache[key] = compute()
        return self._cache[key]

    def summary(self) -> dict:
        return {
            "shape": list(self.shape),
            "spacing": self.spacing,
            "origin": self.lo.tolist(),
            "interior_nodes": self.interior_count,
            "ghost_nodes": self.ghost_count,
            "active_cells": int(self.cell_corners.shape[0]),
            "cut_cells": int(np.sum(self.cell_fraction < 1.0)),
            "boundaries": [b.name for b in self.boundaries],
        }


def cube_geometry(half_width: float, n: int, margin: int = 2) -> tuple[float, float]:
    """Origin coordinate and spacing of the centered cube used by `VoxelDomain.centered_cube`."""
    if n - 1 - 2 * margin < 2:
        raise InvalidArgumentError(f"grid of {n} nodes is too small for a margin of {margin}")
    h = 2.0 * half_width / (n - 1 - 2 * margin)
    return -half_width - margin * h, h


def cube_axes(half_width: float, n: int, dimension: int, margin: int = 2) -> tuple[np.ndarray, ...]:
    lo, h = cube_geometry(half_width, n, margin)
    return tuple(lo + h * np.arange(n) for _ in range(dimension))


def grid_coordinates(axes: Sequence[np.ndarray]) -> np.ndarray:
    """Node coordinates of a tensor grid, shape (nodes, N), C order."""
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=-1)


# =============================================================================
# Fields
# =============================================================================


@dataclass(eq=False)
class ScalarField:
    """Nodal values on a voxel domain (full grid, C order)."""

    domain: VoxelDomain
    values: np.ndarray
    kind: str = "field"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float).reshape(self.domain.shape)

    @classmethod
    def from_function(cls, domain: VoxelDomain, fn: Callable[[np.ndarray], np.ndarray], kind: str = "analytic") -> "ScalarField":
        return cls(domain, np.asarray(fn(domain.coordinates()), dtype=float), kind=kind)

    @classmethod
    def from_solution(
        cls,
        domain: VoxelDomain,
        u: np.ndarray,
        bc_values: Sequence[float],
        kind: str,
        metadata: dict | None = None,
    ) -> "ScalarField":
        """Interior values u, extrapolated ghosts, prescribed values elsewhere."""
        bc = np.asarray(bc_values, dtype=float)
        flat = domain.prescribed_values(bc)
        flat[domain.active_nodes] = domain.expand(u, bc)
        return cls(domain, flat, kind=kind, metadata=dict(metadata or {}))

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def active_values(self) -> np.ndarray:
        return self.flat()[self.domain.active_nodes]

    def interior_values(self) -> np.ndarray:
        return self.flat()[self.domain.interior_nodes]

    def interpolator(self, values: np.ndarray | None = None) -> RegularGridInterpolator:
        data = self.values if values is None else values
        return RegularGridInterpolator(self.domain.axes, data, bounds_error=False, fill_value=np.nan)

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Multilinear interpolation; NaN outside the grid box."""
        return self.interpolator()(np.asarray(points, dtype=float))

    def with_values(self, values: np.ndarray, kind: str | None = None, **metadata: Any) -> "ScalarField":
        return ScalarField(self.domain, values, kind=kind or self.kind, metadata={**self.metadata, **metadata})

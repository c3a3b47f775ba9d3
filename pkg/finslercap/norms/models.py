"""Parametric norm families H on R^N with their derivatives and duals.

All evaluation methods are vectorized over leading axes: an input of shape
(..., N) yields H of shape (...), gradients of shape (..., N) and Hessians of
shape (..., N, N). They assume finite input and a nonzero argument for
derivatives; the checked single-point entry points live in
`finslercap.norms.operations`.
"""

from __future__ import annotations

import hashlib
import json
from abc import ABC, abstractmethod
from enum import Enum
from functools import cached_property
from typing import Any, Sequence

import numpy as np

from finslercap.core.errors import (
    ConstructionError,
    InvalidArgumentError,
    UnsupportedDimensionError,
)
from finslercap.core.logging_config import get_logger

logger = get_logger(__name__)

HESSIAN_FD_STEP = 1e-5


class NormFamily(str, Enum):
    """Supported norm families."""

    EUCLIDEAN = "euclidean"
    ELLIPSOIDAL = "ellipsoidal"
    PNORM = "pnorm"
    REGULARIZED = "regularized"
    SAMPLED = "sampled"
    SUM = "sum"


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _outer(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a[..., :, None] * b[..., None, :]


class NormModel(ABC):
    """A norm H with its dual H_0 and the potentials V = H^2/2, V_0 = H_0^2/2.

    Instances are immutable after construction and safe to share across
    threads.
    """

    family: NormFamily
    #: False when second derivatives come from finite differences
    is_c2: bool = True

    def __init__(self, dimension: int, label: str = "") -> None:
        if dimension < 2:
            raise InvalidArgumentError(f"norm dimension must be >= 2, got {dimension}")
        self.dimension = int(dimension)
        self.label = label or self.family.value

    # -- primal ---------------------------------------------------------

    @abstractmethod
    def h(self, xi: np.ndarray) -> np.ndarray:
        """H(xi)."""

    @abstractmethod
    def grad_h(self, xi: np.ndarray) -> np.ndarray:
        """Gradient of H, 0-homogeneous."""

    @abstractmethod
    def hess_h(self, xi: np.ndarray) -> np.ndarray:
        """Hessian of H, (-1)-homogeneous with hess_h(xi) @ xi = 0."""

    def v(self, xi: np.ndarray) -> np.ndarray:
        return 0.5 * self.h(xi) ** 2

    def grad_v(self, xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        out = np.zeros(xi.shape)
        live = np.any(xi != 0.0, axis=-1)
        if np.any(live):
            out[live] = self.h(xi[live])[..., None] * self.grad_h(xi[live])
        return out

    def hess_v(self, xi: np.ndarray) -> np.ndarray:
        g = self.grad_h(xi)
        return _outer(g, g) + self.h(xi)[..., None, None] * self.hess_h(xi)

    @property
    def is_uniformly_convex(self) -> bool:
        """Whether V = H^2/2 has a Hessian bounded away from 0 everywhere."""
        return True

    # -- dual -----------------------------------------------------------

    def dual_model(self) -> "NormModel | None":
        """Closed-form dual norm H_0, or None when it must be computed numerically."""
        return None

    @cached_property
    def _closed_dual(self) -> "NormModel | None":
        return self.dual_model()

    def dual(self, x: np.ndarray) -> np.ndarray:
        """H_0(x) = sup <x, xi> / H(xi)."""
        if self._closed_dual is not None:
            return self._closed_dual.h(x)
        from finslercap.norms.duality import numeric_dual

        return numeric_dual(self, x).value

    def grad_dual(self, x: np.ndarray) -> np.ndarray:
        if self._closed_dual is not None:
            return self._closed_dual.grad_h(x)
        from finslercap.norms.duality import numeric_dual

        sol = numeric_dual(self, x)
        return sol.argmax / self.h(sol.argmax)[..., None]

    def grad_v_dual(self, x: np.ndarray) -> np.ndarray:
        if self._closed_dual is not None:
            return self._closed_dual.grad_v(x)
        from finslercap.norms.duality import numeric_dual

        sol = numeric_dual(self, x)
        return (sol.value / self.h(sol.argmax))[..., None] * sol.argmax

    def hess_v_dual(self, x: np.ndarray) -> np.ndarray:
        """Hessian of V_0; central differences of grad_v_dual for numeric duals."""
        if self._closed_dual is not None:
            return self._closed_dual.hess_v(x)
        return central_jacobian(self.grad_v_dual, x)

    # -- bookkeeping ----------------------------------------------------

    @abstractmethod
    def parameters(self) -> dict[str, Any]:
        """JSON-serializable description of the model."""

    def key(self) -> str:
        """Stable identity string used for caches and reports."""
        return json.dumps(self.parameters(), sort_keys=True)

    @cached_property
    def equivalence_constants(self) -> tuple[float, float]:
        """(sigma, gamma) with sigma |xi| <= H(xi) <= gamma |xi|."""
        from finslercap.norms.duality import equivalence_constants

        return equivalence_constants(self)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(label={self.label!r}, dimension={self.dimension})"


def central_jacobian(fn, x: np.ndarray, rel_step: float = HESSIAN_FD_STEP) -> np.ndarray:
    """Central-difference Jacobian of a vectorized map R^N -> R^N, symmetrized."""
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    step = rel_step * np.maximum(np.linalg.norm(x, axis=-1), 1e-300)
    jac = np.empty(x.shape + (n,))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        d = step[..., None] * e
        jac[..., :, k] = (fn(x + d) - fn(x - d)) / (2.0 * step[..., None])
    return 0.5 * (jac + np.swapaxes(jac, -1, -2))


# =============================================================================
# Families
# =============================================================================


class EuclideanNorm(NormModel):
    family = NormFamily.EUCLIDEAN

    def h(self, xi):
        return np.linalg.norm(xi, axis=-1)

    def grad_h(self, xi):
        xi = np.asarray(xi, dtype=float)
        return xi / self.h(xi)[..., None]

    def hess_h(self, xi):
        xi = np.asarray(xi, dtype=float)
        r = self.h(xi)
        theta = xi / r[..., None]
        return (np.eye(self.dimension) - _outer(theta, theta)) / r[..., None, None]

    def v(self, xi):
        xi = np.asarray(xi, dtype=float)
        return 0.5 * np.einsum("...i,...i->...", xi, xi)

    def grad_v(self, xi):
        return np.array(xi, dtype=float)

    def hess_v(self, xi):
        xi = np.asarray(xi, dtype=float)
        return np.broadcast_to(np.eye(self.dimension), xi.shape + (self.dimension,)).copy()

    def dual_model(self):
        return EuclideanNorm(self.dimension, label=f"{self.label}*")

    def parameters(self):
        return {"family": self.family.value, "dimension": self.dimension}


class EllipsoidalNorm(NormModel):
    """H(xi) = sqrt(xi^T A xi) for a symmetric positive-definite A."""

    family = NormFamily.ELLIPSOIDAL

    def __init__(self, matrix: Sequence[Sequence[float]] | np.ndarray, label: str = "") -> None:
        a = np.asarray(matrix, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InvalidArgumentError(f"ellipsoidal matrix must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidArgumentError("ellipsoidal matrix has non-finite entries")
        scale = max(np.abs(a).max(), 1e-300)
        if np.abs(a - a.T).max() > 1e-10 * scale:
            raise InvalidArgumentError("ellipsoidal matrix must be symmetric")
        a = 0.5 * (a + a.T)
        if np.linalg.eigvalsh(a).min() <= 0.0:
            raise InvalidArgumentError("ellipsoidal matrix must be positive definite")
        super().__init__(a.shape[0], label)
        self.matrix = _readonly(a)

    def h(self, xi):
        xi = np.asarray(xi, dtype=float)
        q = np.einsum("...i,ij,...j->...", xi, self.matrix, xi)
        return np.sqrt(np.maximum(q, 0.0))

    def grad_h(self, xi):
        xi = np.asarray(xi, dtype=float)
        return (xi @ self.matrix) / self.h(xi)[..., None]

    def hess_h(self, xi):
        xi = np.asarray(xi, dtype=float)
        g = self.grad_h(xi)
        return (self.matrix - _outer(g, g)) / self.h(xi)[..., None, None]

    def v(self, xi):
        xi = np.asarray(xi, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", xi, self.matrix, xi)

    def grad_v(self, xi):
        return np.asarray(xi, dtype=float) @ self.matrix

    def hess_v(self, xi):
        xi = np.asarray(xi, dtype=float)
        return np.broadcast_to(self.matrix, xi.shape + (self.dimension,)).copy()

    def dual_model(self):
        return EllipsoidalNorm(np.linalg.inv(self.matrix), label=f"{self.label}*")

    def parameters(self):
        return {
            "family": self.family.value,
            "dimension": self.dimension,
            "matrix": self.matrix.round(15).tolist(),
        }


class PNorm(NormModel):
    """Weighted p-norm H(xi) = (sum a_i |xi_i|^p)^(1/p)."""

    family = NormFamily.PNORM

    def __init__(self, p: float, weights: Sequence[float], label: str = "") -> None:
        w = np.asarray(weights, dtype=float)
        if not np.isfinite(p) or p <= 1.0:
            raise InvalidArgumentError(f"p must be > 1, got {p}")
        if w.ndim != 1 or not np.all(np.isfinite(w)) or np.any(w <= 0.0):
            raise InvalidArgumentError("p-norm weights must be a vector of positive numbers")
        super().__init__(w.shape[0], label)
        self.p = float(p)
        self.weights = _readonly(w)

    @property
    def is_uniformly_convex(self) -> bool:
        return self.p == 2.0

    def h(self, xi):
        a = np.abs(np.asarray(xi, dtype=float))
        m = a.max(axis=-1)
        safe = np.where(m > 0.0, m, 1.0)
        s = np.sum(self.weights * (a / safe[..., None]) ** self.p, axis=-1)
        return np.where(m > 0.0, safe * s ** (1.0 / self.p), 0.0)

    def grad_h(self, xi):
        xi = np.asarray(xi, dtype=float)
        r = self.h(xi)[..., None]
        return self.weights * np.sign(xi) * (np.abs(xi) / r) ** (self.p - 1.0)

    def hess_h(self, xi):
        xi = np.asarray(xi, dtype=float)
        r = self.h(xi)
        g = self.grad_h(xi)
        with np.errstate(divide="ignore"):
            d = self.weights * (np.abs(xi) / r[..., None]) ** (self.p - 2.0)
        diag = np.zeros(d.shape + (self.dimension,))
        idx = np.arange(self.dimension)
        diag[..., idx, idx] = d
        return (self.p - 1.0) / r[..., None, None] * (diag - _outer(g, g))

    def dual_model(self):
        q = self.p / (self.p - 1.0)
        return PNorm(q, self.weights ** (-1.0 / (self.p - 1.0)), label=f"{self.label}*")

    def parameters(self):
        return {
            "family": self.family.value,
            "dimension": self.dimension,
            "p": self.p,
            "weights": self.weights.tolist(),
        }


class RegularizedNorm(NormModel):
    """H_eps = sqrt((1 - eps) H_base^2 + eps |xi|^2), uniformly convex for eps > 0."""

    family = NormFamily.REGULARIZED

    def __init__(self, base: NormModel, eps: float = 0.05, label: str = "") -> None:
        if not (0.0 < eps < 1.0):
            raise InvalidArgumentError(f"eps must lie in (0, 1), got {eps}")
        super().__init__(base.dimension, label)
        self.base = base
        self.eps = float(eps)

    @property
    def is_c2(self) -> bool:  # type: ignore[override]
        return self.base.is_c2

    def v(self, xi):
        xi = np.asarray(xi, dtype=float)
        return (1.0 - self.eps) * self.base.v(xi) + 0.5 * self.eps * np.einsum("...i,...i->...", xi, xi)

    def grad_v(self, xi):
        xi = np.asarray(xi, dtype=float)
        return (1.0 - self.eps) * self.base.grad_v(xi) + self.eps * xi

    def hess_v(self, xi):
        xi = np.asarray(xi, dtype=float)
        return (1.0 - self.eps) * self.base.hess_v(xi) + self.eps * np.eye(self.dimension)

    def h(self, xi):
        return np.sqrt(2.0 * np.maximum(self.v(xi), 0.0))

    def grad_h(self, xi):
        return self.grad_v(xi) / self.h(xi)[..., None]

    def hess_h(self, xi):
        g = self.grad_h(xi)
        return (self.hess_v(xi) - _outer(g, g)) / self.h(xi)[..., None, None]

    def parameters(self):
        return {
            "family": self.family.value,
            "dimension": self.dimension,
            "eps": self.eps,
            "base": self.base.parameters(),
        }


class SumNorm(NormModel):
    """Nonnegative combination sum_k w_k H_k.

    As a support function it describes the Minkowski sum of the bodies
    supported by the H_k.
    """

    family = NormFamily.SUM

    def __init__(self, models: Sequence[NormModel], weights: Sequence[float], label: str = "") -> None:
        if len(models) == 0 or len(models) != len(weights):
            raise InvalidArgumentError("sum norm needs matching, non-empty models and weights")
        dims = {m.dimension for m in models}
        if len(dims) != 1:
            raise InvalidArgumentError(f"sum norm summands have mixed dimensions {sorted(dims)}")
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0.0) or not np.any(w > 0.0):
            raise InvalidArgumentError("sum norm weights must be nonnegative and not all zero")
        super().__init__(dims.pop(), label)
        self.models = tuple(m for m, wk in zip(models, w) if wk > 0.0)
        self.weights = _readonly(w[w > 0.0])

    @property
    def is_c2(self) -> bool:  # type: ignore[override]
        return all(m.is_c2 for m in self.models)

    def h(self, xi):
        return sum(w * m.h(xi) for m, w in zip(self.models, self.weights))

    def grad_h(self, xi):
        return sum(w * m.grad_h(xi) for m, w in zip(self.models, self.weights))

    def hess_h(self, xi):
        return sum(w * m.hess_h(xi) for m, w in zip(self.models, self.weights))

    def parameters(self):
        return {
            "family": self.family.value,
            "dimension": self.dimension,
            "weights": self.weights.tolist(),
            "models": [m.parameters() for m in self.models],
        }


class SampledNorm(NormModel):
    """Norm given by its values on an N = 3 product sphere grid.

    The sphere values are interpolated by a bicubic spherical spline
    (`RectSphereBivariateSpline`) and extended 1-homogeneously. Second
    derivatives come from central differences of the spline gradient, so the
    model reports `is_c2 = False`.
    """

    family = NormFamily.SAMPLED
    is_c2 = False

    def __init__(self, values: Sequence[float] | np.ndarray, n_pol: int, n_az: int, label: str = "") -> None:
        from scipy.interpolate import RectSphereBivariateSpline

        from finslercap.geometry.sphere import sphere_grid

        vals = np.asarray(values, dtype=float).reshape(-1)
        if vals.shape[0] != n_pol * n_az:
            raise InvalidArgumentError(
                f"sampled norm expects {n_pol * n_az} values for a {n_pol}x{n_az} grid, got {vals.shape[0]}"
            )
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0.0):
            raise ConstructionError("sampled norm values must be finite and positive")
        if n_az % 2:
            raise InvalidArgumentError("sampled norm needs an even azimuthal order for the evenness check")
        table = vals.reshape(n_pol, n_az)
        antipodal = np.roll(table[::-1, :], n_az // 2, axis=1)
        mismatch = np.abs(table - antipodal).max()
        if mismatch > 1e-8 * table.max():
            raise ConstructionError(
                f"sampled norm is not even: max |H(theta) - H(-theta)| = {mismatch:.3e}"
            )
        super().__init__(3, label)
        grid = sphere_grid(3, n_pol, n_az)
        self.n_pol = int(n_pol)
        self.n_az = int(n_az)
        self.values = _readonly(vals)
        self._spline = RectSphereBivariateSpline(grid.colatitudes, grid.longitudes, table, s=0)

    @classmethod
    def from_model(cls, model: NormModel, n_pol: int, n_az: int, label: str = "") -> "SampledNorm":
        """Sample an existing N = 3 norm on the product grid."""
        from finslercap.geometry.sphere import sphere_grid

        if model.dimension != 3:
            raise UnsupportedDimensionError(model.dimension, "sampled norms are defined on S^2 only")
        grid = sphere_grid(3, n_pol, n_az)
        return cls(model.h(grid.nodes), n_pol, n_az, label=label or f"sampled({model.label})")

    def _angles(self, xi: np.ndarray):
        xi = np.asarray(xi, dtype=float)
        r = np.linalg.norm(xi, axis=-1)
        safe = np.where(r > 0.0, r, 1.0)
        colat = np.arccos(np.clip(xi[..., 2] / safe, -1.0, 1.0))
        lon = np.mod(np.arctan2(xi[..., 1], xi[..., 0]), 2.0 * np.pi)
        return r, colat, lon

    def _sphere_values(self, colat, lon, dtheta=0, dphi=0):
        shape = np.shape(colat)
        out = self._spline(np.ravel(colat), np.ravel(lon), dtheta=dtheta, dphi=dphi, grid=False)
        return np.asarray(out).reshape(shape)

    def h(self, xi):
        r, colat, lon = self._angles(xi)
        return r * self._sphere_values(colat, lon)

    def grad_h(self, xi):
        xi = np.asarray(xi, dtype=float)
        r, colat, lon = self._angles(xi)
        s = self._sphere_values(colat, lon)
        s_t = self._sphere_values(colat, lon, dtheta=1)
        s_p = self._sphere_values(colat, lon, dphi=1)
        sin_c = np.maximum(np.sin(colat), 1e-8)
        theta = xi / np.where(r > 0.0, r, 1.0)[..., None]
        e_colat = np.stack(
            [np.cos(colat) * np.cos(lon), np.cos(colat) * np.sin(lon), -np.sin(colat)], axis=-1
        )
        e_lon = np.stack([-np.sin(lon), np.cos(lon), np.zeros_like(lon)], axis=-1)
        return s[..., None] * theta + s_t[..., None] * e_colat + (s_p / sin_c)[..., None] * e_lon

    def hess_h(self, xi):
        return central_jacobian(self.grad_h, xi)

    def parameters(self):
        return {
            "family": self.family.value,
            "dimension": self.dimension,
            "n_pol": self.n_pol,
            "n_az": self.n_az,
            "values_sha1": hashlib.sha1(self.values.tobytes()).hexdigest(),
        }


def is_pde_admissible(model: NormModel) -> bool:
    """Whether V = H^2/2 is uniformly convex as the energy solvers require."""
    if isinstance(model, PNorm):
        return model.is_uniformly_convex
    if isinstance(model, SumNorm):
        return all(is_pde_admissible(m) for m in model.models)
    return True

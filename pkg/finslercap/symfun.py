"""Elementary symmetric functions of matrices and the Newton inequality.

S_k(A) is the sum of the k x k principal minors of A; its cofactor matrix
S^k_ij(A) = dS_k/da_ij. For A = BC with B symmetric positive semidefinite and
C symmetric, S_2(A) <= (n - 1)/(2n) Tr(A)^2, with equality (and Tr A != 0)
only when A is a multiple of the identity and B is positive definite.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from itertools import combinations
from math import comb

import numpy as np

from finslercap.core.errors import InvalidArgumentError
from finslercap.core.logging_config import get_logger

logger = get_logger(__name__)

COMBINATORIAL_MAX_N = 8
PSD_FLOOR = 1e-12
NEWTON_SLACK_TOL = 1e-10
EQUALITY_TOL = 1e-10
ISOTROPY_TOL = 1e-12


def _square(a, name: str = "A") -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise InvalidArgumentError(f"{name} must be a square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return arr


def _check_k(n: int, k: int) -> None:
    if not (1 <= k <= n):
        raise InvalidArgumentError(f"k must satisfy 1 <= k <= {n}, got {k}")


def s_k(a, k: int, method: str = "auto") -> float:
    """S_k(A).

    `method` selects the principal-minor sum ("minors", default for n <= 8)
    or the characteristic-polynomial coefficients ("charpoly").
    """
    a = _square(a)
    n = a.shape[0]
    _check_k(n, k)
    if method == "auto":
        method = "minors" if n <= COMBINATORIAL_MAX_N else "charpoly"
    if method == "minors":
        idx = np.array(list(combinations(range(n), k)))
        minors = a[idx[:, :, None], idx[:, None, :]]
        return float(np.sum(np.linalg.det(minors)))
    if method == "charpoly":
        # det(lambda I - A) = sum_k (-1)^k S_k lambda^(n-k)
        coeffs = np.real(np.poly(a))
        return float((-1) ** k * coeffs[k])
    raise InvalidArgumentError(f"unknown method '{method}'")


def s2_fast(a: np.ndarray) -> np.ndarray:
    """S_2 = (Tr(A)^2 - Tr(A^2)) / 2, batched over leading axes."""
    a = np.asarray(a, dtype=float)
    tr = np.trace(a, axis1=-2, axis2=-1)
    tr_sq = np.einsum("...ij,...ji->...", a, a)
    return 0.5 * (tr * tr - tr_sq)


def s_k_cofactor(a, k: int) -> np.ndarray:
    """S^k_ij(A) = dS_k/da_ij = sum_{m<k} (-1)^m S_{k-1-m}(A) (A^T)^m."""
    a = _square(a)
    n = a.shape[0]
    _check_k(n, k)
    out = np.zeros_like(a)
    power = np.eye(n)
    for m in range(k):
        coeff = 1.0 if k - 1 - m == 0 else s_k(a, k - 1 - m)
        out += (-1) ** m * coeff * power
        power = power @ a.T
    return out


def det_directional(a, b) -> float:
    """d/dt det(A + tB) at t = 0."""
    a = _square(a)
    b = _square(b, "B")
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sum(s_k_cofactor(a, a.shape[0]) * b))


def mixed_discriminant(a1: np.ndarray, a2: np.ndarray) -> np.ndarray:
    """D(A2, A1, ..., A1) = (1/n) d/dt det(A1 + t A2) at t = 0, batched.

    Uses det(A1) Tr(A1^{-1} A2) / n; A1 must be invertible.
    """
    a1 = np.asarray(a1, dtype=float)
    a2 = np.asarray(a2, dtype=float)
    n = a1.shape[-1]
    sol = np.linalg.solve(a1, a2)
    return np.linalg.det(a1) * np.trace(sol, axis1=-2, axis2=-1) / n


@dataclass
class NewtonReport:
    """Outcome of one Newton-inequality check for A = BC."""

    n: int
    lhs: float
    bound: float
    slack: float
    violation: bool
    equality: bool
    trace: float
    lambda_min_b: float
    isotropy_residual: float | None
    rigidity_holds: bool | None

    def to_dict(self) -> dict:
        return asdict(self)


def _validate_pair(b, c) -> tuple[np.ndarray, np.ndarray, float]:
    b = _square(b, "B")
    c = _square(c, "C")
    if b.shape != c.shape:
        raise InvalidArgumentError(f"B and C must have the same shape, got {b.shape} and {c.shape}")
    scale_b = max(np.abs(b).max(), 1e-300)
    scale_c = max(np.abs(c).max(), 1.0)
    if np.abs(b - b.T).max() > 1e-12 * scale_b:
        raise InvalidArgumentError("B must be symmetric")
    if np.abs(c - c.T).max() > 1e-12 * scale_c:
        raise InvalidArgumentError("C must be symmetric")
    lam_min = float(np.linalg.eigvalsh(0.5 * (b + b.T))[0])
    if lam_min < -PSD_FLOOR * np.linalg.norm(b, 2):
        raise InvalidArgumentError(f"B must be positive semidefinite (lambda_min = {lam_min:.3e})")
    return b, c, lam_min


def newton_check(
    b,
    c,
    tol: float = EQUALITY_TOL,
    tol_eq: float = ISOTROPY_TOL,
) -> NewtonReport:
    """Check S_2(BC) <= ((n - 1)/(2n)) Tr(BC)^2 and its equality case."""
    b, c, lam_min = _validate_pair(b, c)
    a = b @ c
    n = a.shape[0]
    tr = float(np.trace(a))
    lhs = float(s2_fast(a))
    bound = (n - 1) / (2.0 * n) * tr * tr
    slack = bound - lhs
    scale = max(1.0, abs(bound))
    violation = slack < -NEWTON_SLACK_TOL * scale
    equality = abs(slack) <= tol * scale

    isotropy: float | None = None
    rigid: bool | None = None
    if equality and abs(tr) > tol * scale:
        isotropy = float(np.abs(a - (tr / n) * np.eye(n)).max())
        rigid = bool(isotropy <= tol_eq * max(1.0, np.abs(a).max()) and lam_min > 0.0)
        if not rigid:
            logger.warning(
                "newton_equality_not_rigid",
                n=n,
                isotropy_residual=isotropy,
                lambda_min_b=lam_min,
                message="Equality flagged but A is not a multiple of the identity",
            )
    return NewtonReport(
        n=n,
        lhs=lhs,
        bound=bound,
        slack=slack,
        violation=bool(violation),
        equality=bool(equality),
        trace=tr,
        lambda_min_b=lam_min,
        isotropy_residual=isotropy,
        rigidity_holds=rigid,
    )


def _random_pairs(rng: np.random.Generator, n: int, trials: int) -> tuple[np.ndarray, np.ndarray]:
    # psd B of random rank in 1..n, symmetric C
    g = rng.standard_normal((trials, n, n))
    rank = rng.integers(1, n + 1, size=trials)
    mask = np.arange(n)[None, :] < rank[:, None]
    g = g * mask[:, None, :]
    b = g @ np.swapaxes(g, 1, 2)
    m = rng.standard_normal((trials, n, n))
    c = 0.5 * (m + np.swapaxes(m, 1, 2))
    return b, c


def newton_sweep(trials: int = 10_000, dims: tuple[int, ...] = (2, 3, 4, 5, 6), seed: int = 0) -> dict:
    """Seeded randomized sweep of the Newton inequality plus explicit equality cases.

    Returns a JSON-ready dict with per-dimension violation counts, the
    minimum relative slack seen and the equality-case checks.
    """
    per_dim = []
    total_violations = 0
    for n in dims:
        rng = np.random.default_rng(np.random.SeedSequence([seed, n]))
        b, c = _random_pairs(rng, n, trials)
        a = b @ c
        tr = np.trace(a, axis1=1, axis2=2)
        lhs = s2_fast(a)
        bound = (n - 1) / (2.0 * n) * tr * tr
        slack = bound - lhs
        scale = np.maximum(1.0, np.abs(bound))
        violations = int(np.sum(slack < -NEWTON_SLACK_TOL * scale))
        total_violations += violations

        equality_cases = []
        for lam in (1.0, -2.5, 0.3):
            report = newton_check(np.eye(n), lam * np.eye(n))
            equality_cases.append({
                "lambda": lam,
                "equality": report.equality,
                "isotropy_residual": report.isotropy_residual,
                "rigidity_holds": report.rigidity_holds,
            })
        per_dim.append({
            "n": n,
            "trials": trials,
            "violations": violations,
            "min_relative_slack": float(np.min(slack / scale)),
            "equality_cases": equality_cases,
        })
        logger.debug("newton_sweep_dimension", n=n, violations=violations, message="Newton sweep finished")
    return {
        "seed": seed,
        "trials_per_dimension": trials,
        "total_violations": total_violations,
        "dimensions": per_dim,
        "combinations_checked": int(sum(comb(n, 2) for n in dims)),
    }

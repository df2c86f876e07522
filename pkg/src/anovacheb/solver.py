"""Matrix-free least squares over grouped transforms.

For Chebyshev-distributed nodes the coefficients solve
``min ||y - F h||``.  Uniform nodes are first shrunk by ``1 - theta`` and
the problem is preconditioned with ``W = diag(sqrt(omega(x)))``:
``min ||W y - W F h||``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from anovacheb.core import CoefficientVector, Density, GroupedIndexSet, NodeSet
from anovacheb.errors import DomainError, NumericError, ResourceError, UsageError
from anovacheb.transform import AUTO, GroupedTransform

DEFAULT_THETA = 1e-4
ADJOINT_CHECK_TOL = 1e-10
DIAGNOSTIC_MAX_COEFFICIENTS = 2000


@dataclass(frozen=True)
class LsqrConfig:
    max_iterations: int = 1000
    rel_tolerance: float = 1e-8
    damping: float = 0.0

    def __post_init__(self):
        if int(self.max_iterations) < 1:
            raise UsageError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if not self.rel_tolerance > 0:
            raise UsageError(f"rel_tolerance must be > 0, got {self.rel_tolerance}")
        if not self.damping >= 0:
            raise UsageError(f"damping must be >= 0, got {self.damping}")


@dataclass
class LsqrResult:
    solution: np.ndarray
    iterations: int
    converged: bool
    stop_reason: int
    residual_norm: float
    info: dict = field(default_factory=dict)


def _finite(v, what):
    if not np.all(np.isfinite(v)):
        raise NumericError(f"{what} produced NaN or infinite values")
    return v


def check_adjoint(apply_a, apply_at, n, m, seed=0, tol=ADJOINT_CHECK_TOL):
    """One random probe of ``<A h, f> == <h, A^T f>``; returns the relative mismatch."""
    rng = np.random.default_rng(seed)
    h = rng.standard_normal(n)
    f = rng.standard_normal(m)
    Ah = np.asarray(apply_a(h))
    Atf = np.asarray(apply_at(f))
    lhs, rhs = float(Ah @ f), float(h @ Atf)
    scale = np.linalg.norm(Ah) * np.linalg.norm(f) + np.linalg.norm(h) * np.linalg.norm(Atf)
    mismatch = abs(lhs - rhs) / scale if scale > 0 else 0.0
    if mismatch > tol:
        raise NumericError(f"operator and adjoint disagree (relative mismatch {mismatch:.3e})")
    return mismatch


def lsqr_solve(apply_a, apply_at, b, n, cfg: LsqrConfig = LsqrConfig(), verify_adjoint=True) -> LsqrResult:
    """LSQR for ``min ||b - A h||`` given only products with ``A`` and ``A^T``.

    Stops when both LSQR backward-error estimates fall below
    ``cfg.rel_tolerance``.  On hitting ``max_iterations`` the last iterate is
    returned with ``converged=False``.
    """
    b = _finite(np.asarray(b, dtype=np.float64).ravel(), "right-hand side")
    m = b.size
    if verify_adjoint:
        check_adjoint(apply_a, apply_at, n, m)
    op = spla.LinearOperator(
        (m, n),
        matvec=lambda v: _finite(np.asarray(apply_a(np.ravel(v)), dtype=np.float64), "forward operator"),
        rmatvec=lambda v: _finite(np.asarray(apply_at(np.ravel(v)), dtype=np.float64), "adjoint operator"),
        dtype=np.float64,
    )
    if not np.any(b):
        return LsqrResult(np.zeros(n), 0, True, 0, 0.0)
    tol = cfg.rel_tolerance
    out = spla.lsqr(op, b, damp=cfg.damping, atol=tol, btol=tol, conlim=1e12,
                    iter_lim=int(cfg.max_iterations))
    x, istop, itn, r1norm = out[0], out[1], out[2], out[3]
    _finite(x, "LSQR iteration")
    converged = istop not in (3, 6, 7)
    return LsqrResult(x, int(itn), bool(converged), int(istop), float(r1norm),
                      {"anorm": float(out[5]), "acond": float(out[6]), "arnorm": float(out[7])})


def chebyshev_density(x):
    """Product Chebyshev density at a point (or at each row of an (M, d) array)."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(x) >= 1.0):
        raise DomainError("Chebyshev density is singular at |x_s| = 1; pad the nodes first")
    return np.prod(1.0 / (math.pi * np.sqrt(1.0 - x * x)), axis=-1)


def scale_nodes(X: NodeSet, theta=DEFAULT_THETA) -> NodeSet:
    """Shrink uniform nodes into ``[-1 + theta, 1 - theta]^d``."""
    theta = float(theta)
    if not 0.0 < theta < 1.0:
        raise UsageError(f"padding theta must lie in (0, 1), got {theta}")
    if X.density != Density.UNIFORM:
        raise UsageError("node padding applies to uniformly distributed nodes only")
    if X.padded:
        raise UsageError("node set is already padded")
    return NodeSet((1.0 - theta) * X.nodes, Density.UNIFORM, theta)


def weight_vector(X: NodeSet):
    """``sqrt(omega(x_j))`` for every node; requires padded nodes."""
    w = np.sqrt(chebyshev_density(X.nodes))
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise NumericError("weights must be positive and finite")
    return w


def _solve(transform: GroupedTransform, y, cfg, weights=None, verify_adjoint=True):
    n = transform.index_set.cardinality()
    y = np.asarray(y, dtype=np.float64).ravel()
    if weights is None:
        res = lsqr_solve(transform.apply, transform.adjoint, y, n, cfg, verify_adjoint)
    else:
        w = np.asarray(weights, dtype=np.float64)
        res = lsqr_solve(lambda h: w * transform.apply(h), lambda f: transform.adjoint(w * f),
                         w * y, n, cfg, verify_adjoint)
    fitted = transform.apply(res.solution)
    res.info["residual_norm"] = float(np.linalg.norm(y - fitted))
    if weights is not None:
        res.info["weighted_residual_norm"] = float(np.linalg.norm(weights * (y - fitted)))
    M = transform.M
    res.info["underdetermined"] = bool(n > M)
    res.info["stable_regime"] = bool(M > 1 and n <= M / math.log(M))
    if n > M:
        warnings.warn(f"underdetermined system: {n} coefficients for {M} samples", RuntimeWarning,
                      stacklevel=3)
    return CoefficientVector(transform.index_set, res.solution), res


def solve_chebyshev_nodes(X: NodeSet, y, index_set: GroupedIndexSet, cfg=LsqrConfig(),
                          threads=None, mode=AUTO, return_info=False):
    """Least-squares coefficients for Chebyshev-distributed nodes."""
    if X.density != Density.CHEBYSHEV:
        raise UsageError("solve_chebyshev_nodes expects a Chebyshev-distributed node set")
    F = GroupedTransform(X, index_set, mode=mode, threads=threads)
    coeffs, res = _solve(F, y, cfg)
    return (coeffs, res) if return_info else coeffs


def solve_uniform_nodes(X: NodeSet, y, index_set: GroupedIndexSet, theta=DEFAULT_THETA,
                        cfg=LsqrConfig(), threads=None, mode=AUTO, return_info=False, weighted=True):
    """Weighted least-squares coefficients for uniformly distributed nodes.

    Unpadded node sets are scaled by ``1 - theta`` first; an already padded
    set is used as is.  ``weighted=False`` skips the preconditioner and
    solves the plain problem on the scaled nodes.
    """
    if X.density != Density.UNIFORM:
        raise UsageError("solve_uniform_nodes expects a uniformly distributed node set")
    Xs = X if X.padded else scale_nodes(X, theta)
    w = weight_vector(Xs) if weighted else None
    F = GroupedTransform(Xs, index_set, mode=mode, threads=threads)
    coeffs, res = _solve(F, y, cfg, weights=w)
    res.info["theta"] = Xs.theta
    res.info["weighted"] = bool(weighted)
    return (coeffs, res) if return_info else coeffs


@dataclass
class SpectralReport:
    min_singular: float
    max_singular: float
    lower_bound: float
    upper_bound: float
    inside: bool
    weighted: bool
    gamma: float = 0.0
    kappa: float = float("nan")
    size_condition_met: bool = False
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {k: getattr(self, k) for k in (
            "min_singular", "max_singular", "lower_bound", "upper_bound", "inside", "weighted",
            "gamma", "kappa", "size_condition_met")} | {"details": self.details}


def uniform_band(M, d, ds, theta, delta):
    """``(kappa, gamma)`` of the eigenvalue bound for padded uniform nodes."""
    kappa = (2 * theta - theta**2) ** (d / 2) / (2**ds * 48 * (math.sqrt(2) - math.log(delta)))
    gamma = 4**ds * kappa * (math.acos(1 - theta) / math.pi) ** d * M / math.log(2 * M)
    return kappa, gamma


def spectral_diagnostic(X: NodeSet, index_set: GroupedIndexSet, weighted=None, delta=0.05,
                        theta=None, max_coefficients=DIAGNOSTIC_MAX_COEFFICIENTS) -> SpectralReport:
    """Extreme singular values of ``F / sqrt(M)`` (or of the weighted matrix).

    With ``weighted`` the rows are scaled by ``sqrt(omega(x) / rho(x))`` where
    ``rho`` is the uniform sampling density of the padded nodes, so that the
    expected Gram matrix is the one bounded for padded uniform nodes.  The
    reported band is ``[sqrt(1/2 - gamma), sqrt(3/2 + gamma)]`` with
    ``gamma = 0`` for unweighted Chebyshev nodes.
    """
    n = index_set.cardinality()
    if n > max_coefficients:
        raise ResourceError(f"diagnostic needs a dense {X.M}x{n} matrix; cap is {max_coefficients} columns")
    if weighted is None:
        weighted = X.density == Density.UNIFORM
    Xs = X
    if weighted and not X.padded:
        if X.density != Density.UNIFORM:
            raise UsageError("weighted diagnostic expects uniformly distributed nodes")
        Xs = scale_nodes(X, DEFAULT_THETA if theta is None else theta)
    F = GroupedTransform(Xs, index_set, threads=1).dense()
    M, d = Xs.M, Xs.d
    gamma, kappa, cond = 0.0, float("nan"), False
    if weighted:
        th = Xs.theta
        rho = (2.0 * (1.0 - th)) ** (-d)
        F = F * np.sqrt(chebyshev_density(Xs.nodes) / rho)[:, None]
        ds = index_set.term_set.max_order
        kappa, gamma = uniform_band(M, d, ds, th, delta)
        cond = bool(n <= kappa * M / math.log(2 * M))
    else:
        ds = index_set.term_set.max_order
        cond = bool(n <= M / (2**ds * 48 * (math.sqrt(2) - math.log(delta)) * math.log(2 * M)))
    # singular values via the Gram matrix: exact for orthonormal columns, accurate near the band
    ev = np.linalg.eigvalsh(F.T @ F / M)
    lo = math.sqrt(max(0.0, 0.5 - gamma))
    hi = math.sqrt(1.5 + gamma)
    smin, smax = math.sqrt(max(float(ev[0]), 0.0)), math.sqrt(max(float(ev[-1]), 0.0))
    if n > M:
        smin = 0.0
    return SpectralReport(smin, smax, lo, hi, bool(lo <= smin and smax <= hi), bool(weighted),
                          gamma, kappa, cond, {"M": M, "cardinality": n, "delta": delta})

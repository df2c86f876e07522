"""Grouped Chebyshev transforms.

:class:`GroupedTransform` applies the block matrix ``F = [F_1 ... F_n]`` whose
block ``F_i`` holds the normed tensor Chebyshev polynomials of term ``u_i``
evaluated at the nodes, and its transpose.  Blocks are independent; they may
run on a thread pool, and their contributions are always reduced in term
order so the result does not depend on the worker count.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from anovacheb import _kernels
from anovacheb.core import CoefficientVector, GroupedIndexSet, NodeSet
from anovacheb.errors import DomainError, ResourceError, ShapeError, UsageError
from anovacheb.nfct import DEFAULT_CUTOFF, DEFAULT_SIGMA, WindowPlan

SQRT2 = math.sqrt(2.0)
DIRECT_OPERATION_LIMIT = 2**24
MAX_FAST_ORDER = 3
DIRECT, FAST, AUTO = "direct", "fast", "auto"


def default_threads():
    try:
        return max(1, int(os.environ.get("ANOVACHEB_THREADS", "1")))
    except ValueError:
        return 1


def chebyshev_basis(k, x):
    """Normed tensor Chebyshev polynomial ``T_k(x)`` at a single point."""
    k = np.asarray(k, dtype=np.int64).ravel()
    x = np.asarray(x, dtype=np.float64).ravel()
    if k.shape != x.shape:
        raise ShapeError(f"frequency has {k.size} entries, point has {x.size}")
    if np.any(k < 0):
        raise UsageError("frequencies must be non-negative")
    if np.any(np.abs(x) > 1.0):
        raise DomainError(f"point {x.tolist()} is outside [-1, 1]^d")
    value = 1.0
    for ks, xs in zip(k, x):
        if ks:
            value *= SQRT2 * math.cos(ks * math.acos(xs))
    return value


def basis_table(angles, N):
    """``sqrt(2) cos(k * angle)`` for k = 1..N-1, shape (M, N-1)."""
    k = np.arange(1, N, dtype=np.float64)
    return SQRT2 * np.cos(angles[:, None] * k[None, :])


class TermTransformPlan:
    """Forward/adjoint map of one ANOVA term at fixed nodes.

    Parameters
    ----------
    u : tuple of int
        The term (1-based variables).
    N : int
        Bandlimit of the term.
    angles : (M, |u|) array
        ``arccos`` of the node coordinates in the variables of ``u``.
    mode : {"auto", "direct", "fast"}
    tables : sequence of arrays, optional
        Precomputed basis tables (shared between terms by
        :class:`GroupedTransform`).
    """

    def __init__(self, u, N, angles, mode=AUTO, sigma=DEFAULT_SIGMA, m=DEFAULT_CUTOFF, tables=None):
        self.u = tuple(u)
        self.N = int(N)
        self.p = len(self.u)
        self.angles = np.asarray(angles, dtype=np.float64).reshape(-1, self.p) if self.p else None
        self.M = self.angles.shape[0] if self.p else None
        self.sigma, self.m = sigma, m
        self.size = (self.N - 1) ** self.p if self.p else 1
        if mode not in (AUTO, DIRECT, FAST):
            raise UsageError(f"unknown transform mode {mode!r}")
        if mode == AUTO:
            mode = DIRECT if self.p == 0 or self.size * self.M <= DIRECT_OPERATION_LIMIT else FAST
        if mode == FAST and not 1 <= self.p <= MAX_FAST_ORDER:
            mode = DIRECT
        self.mode = mode
        self._tables = tuple(tables) if tables is not None else None
        self._window = None

    @property
    def tables(self):
        if self._tables is None and self.p:
            self._tables = tuple(basis_table(self.angles[:, s], self.N) for s in range(self.p))
        return self._tables

    @property
    def window(self):
        if self._window is None:
            self._window = WindowPlan(self.angles, self.N, self.sigma, self.m)
        return self._window

    def _check_coeffs(self, coeffs):
        c = np.asarray(coeffs, dtype=np.float64).ravel()
        if c.size != self.size:
            raise ShapeError(f"term {self.u}: got {c.size} coefficients, expected {self.size}")
        return c

    def _check_values(self, r, M):
        r = np.asarray(r, dtype=np.float64).ravel()
        if M is not None and r.size != M:
            raise ShapeError(f"term {self.u}: got {r.size} values, expected {M}")
        return r

    def forward_direct(self, coeffs):
        c = self._check_coeffs(coeffs)
        return _kernels.forward_direct(self.tables, c)

    def forward_fast(self, coeffs):
        c = self._check_coeffs(coeffs)
        return self.window.forward(c)

    def adjoint_direct(self, r):
        r = self._check_values(r, self.M)
        return _kernels.adjoint_direct(self.tables, r)

    def adjoint_fast(self, r):
        r = self._check_values(r, self.M)
        return self.window.adjoint(r)

    def forward(self, coeffs):
        if self.mode == FAST:
            return self.forward_fast(coeffs)
        return self.forward_direct(coeffs)

    def adjoint(self, r):
        if self.mode == FAST:
            return self.adjoint_fast(r)
        return self.adjoint_direct(r)


def term_forward_direct(plan, coeffs):
    return plan.forward_direct(coeffs)


def term_forward_fast(plan, coeffs):
    return plan.forward_fast(coeffs)


def term_adjoint(plan, residual, mode=None):
    mode = mode or plan.mode
    return plan.adjoint_fast(residual) if mode == FAST else plan.adjoint_direct(residual)


class GroupedTransform:
    """Matrix-free ``F(X, I(U))`` for a node set and grouped index set.

    ``arccos`` of every coordinate is computed once; per-variable basis
    tables are shared by all direct-mode terms touching that variable.
    """

    def __init__(self, nodes, index_set: GroupedIndexSet, mode=AUTO, threads=None,
                 sigma=DEFAULT_SIGMA, m=DEFAULT_CUTOFF):
        x = nodes.nodes if isinstance(nodes, NodeSet) else np.asarray(nodes, dtype=np.float64)
        x = np.atleast_2d(x)
        if x.shape[1] != index_set.d:
            raise ShapeError(f"nodes have dimension {x.shape[1]}, index set has d={index_set.d}")
        if np.any(np.abs(x) > 1.0) or not np.all(np.isfinite(x)):
            raise DomainError("nodes must lie in [-1, 1]^d")
        self.index_set = index_set
        self.M = x.shape[0]
        self.threads = default_threads() if threads is None else max(1, int(threads))
        self.angles = np.arccos(x)

        plans = []
        maxN = {}
        pending = []
        for u in index_set.terms:
            if not u:
                plans.append(None)
                continue
            cols = [s - 1 for s in u]
            plan = TermTransformPlan(u, index_set.bandlimits[u], self.angles[:, cols], mode, sigma, m)
            if plan.mode == DIRECT:
                for s in u:
                    maxN[s] = max(maxN.get(s, 2), plan.N)
                pending.append(plan)
            plans.append(plan)
        shared = {s: basis_table(self.angles[:, s - 1], n) for s, n in maxN.items()}
        for plan in pending:
            plan._tables = tuple(shared[s][:, : plan.N - 1] for s in plan.u)
        self.plans = plans

    @property
    def shape(self):
        return (self.M, self.index_set.cardinality())

    def _map(self, fn, items):
        if self.threads == 1 or len(items) < 2:
            return [fn(it) for it in items]
        with ThreadPoolExecutor(max_workers=self.threads) as ex:
            return list(ex.map(fn, items))

    def _coeff_array(self, h):
        if isinstance(h, CoefficientVector):
            if h.index_set != self.index_set:
                raise ShapeError("coefficient vector belongs to a different index set")
            h = h.values
        h = np.asarray(h, dtype=np.float64).ravel()
        if h.size != self.index_set.cardinality():
            raise ShapeError(f"got {h.size} coefficients, expected {self.index_set.cardinality()}")
        return h

    def apply(self, h):
        h = self._coeff_array(h)
        idx = self.index_set

        def block(i):
            plan = self.plans[i]
            c = h[idx.block_slice(idx.terms[i])]
            if plan is None:
                return np.full(self.M, c[0])
            return plan.forward(c)

        parts = self._map(block, range(len(self.plans)))
        out = np.zeros(self.M)
        for part in parts:
            out += part
        return out

    def adjoint(self, f):
        f = np.asarray(f, dtype=np.float64).ravel()
        if f.size != self.M:
            raise ShapeError(f"got {f.size} values, expected {self.M}")

        def block(i):
            plan = self.plans[i]
            if plan is None:
                return np.array([np.sum(f)])
            return plan.adjoint(f)

        parts = self._map(block, range(len(self.plans)))
        return np.concatenate(parts)

    def adjoint_vector(self, f) -> CoefficientVector:
        return CoefficientVector(self.index_set, self.adjoint(f))

    def dense(self, max_entries=2000 * 10**4):
        """Explicit ``(M, |I|)`` matrix; for diagnostics on small problems."""
        M, n = self.shape
        if M * n > max_entries:
            raise ResourceError(f"dense matrix of {M}x{n} exceeds the cap of {max_entries} entries")
        F = np.empty((M, n))
        idx = self.index_set
        for u, plan in zip(idx.terms, self.plans):
            sl = idx.block_slice(u)
            if plan is None:
                F[:, sl] = 1.0
                continue
            tables = plan.tables
            block = tables[0]
            for t in tables[1:]:
                block = (block[:, :, None] * t[:, None, :]).reshape(M, -1)
            F[:, sl] = block
        return F


def grouped_apply(transform: GroupedTransform, h):
    return transform.apply(h)


def grouped_adjoint(transform: GroupedTransform, f) -> CoefficientVector:
    return transform.adjoint_vector(f)

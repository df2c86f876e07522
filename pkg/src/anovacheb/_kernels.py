"""Inner loops of the transforms.

Each kernel exists twice: a numba ``@njit`` version and a pure numpy version.
Set ``ANOVACHEB_NUMBA=0`` before import to force the numpy path (numba is
also skipped automatically when it cannot be imported).  Both paths are
deterministic; they are not bitwise identical to each other.

Conventions: ``tables`` is a tuple of per-dimension arrays of shape
``(M, n_s)`` holding basis values for frequencies ``1..n_s``; coefficient
blocks are flat in C order.  Grid kernels read/write a p-dimensional array
through per-dimension index and weight arrays of shape ``(M, W)``.
"""

import os

import numpy as np

_CHUNK = 1 << 21


def _numba_requested():
    flag = os.environ.get("ANOVACHEB_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "off", "no")


try:
    if not _numba_requested():
        raise ImportError
    import numba as nb
except ImportError:
    nb = None

USE_NUMBA = nb is not None


def backend():
    return "numba" if USE_NUMBA else "numpy"


# ----------------------------------------------------------------------------
# numpy implementations


def _chunks(M, per_node):
    step = max(1, _CHUNK // max(1, per_node))
    for start in range(0, M, step):
        yield slice(start, min(M, start + step))


def np_forward_direct(tables, coef):
    shape = tuple(t.shape[1] for t in tables)
    C = coef.reshape(shape)
    M = tables[0].shape[0]
    out = np.empty(M)
    inner = int(np.prod(shape[:-1])) if len(shape) > 1 else 1
    for sl in _chunks(M, inner):
        Z = np.einsum("jb,...b->j...", tables[-1][sl], C)
        for t in tables[:-1]:
            Z = np.einsum("ja,ja...->j...", t[sl], Z)
        out[sl] = Z
    return out


def np_adjoint_direct(tables, r):
    shape = tuple(t.shape[1] for t in tables)
    M = tables[0].shape[0]
    out = np.zeros(shape)
    inner = int(np.prod(shape[:-1])) if len(shape) > 1 else 1
    for sl in _chunks(M, inner):
        Z = r[sl, None] * tables[0][sl]
        for t in tables[1:-1]:
            Z = np.einsum("j...,ja->j...a", Z, t[sl])
        if len(tables) > 1:
            out += np.einsum("j...,jb->...b", Z, tables[-1][sl])
        else:
            out += Z.sum(axis=0)
    return out.ravel()


def _flat_window(shape, idx, wts, sl):
    p = len(shape)
    strides = np.cumprod((1,) + shape[::-1][:-1])[::-1]
    flat = np.zeros((sl.stop - sl.start,) + (1,) * p, dtype=np.int64)
    w = np.ones((sl.stop - sl.start,) + (1,) * p)
    for s in range(p):
        view = [slice(None)] + [None] * p
        view[s + 1] = slice(None)
        flat = flat + idx[s][sl][tuple(view)] * strides[s]
        w = w * wts[s][sl][tuple(view)]
    n = flat.shape[0]
    return flat.reshape(n, -1), w.reshape(n, -1)


def np_gather(grid, idx, wts):
    shape = grid.shape
    g = grid.ravel()
    M = idx[0].shape[0]
    out = np.empty(M)
    per = idx[0].shape[1] ** len(shape)
    for sl in _chunks(M, per):
        flat, w = _flat_window(shape, idx, wts, sl)
        out[sl] = (g[flat] * w).sum(axis=1)
    return out


def np_scatter(r, shape, idx, wts):
    size = int(np.prod(shape))
    g = np.zeros(size)
    M = idx[0].shape[0]
    per = idx[0].shape[1] ** len(shape)
    for sl in _chunks(M, per):
        flat, w = _flat_window(shape, idx, wts, sl)
        g += np.bincount(flat.ravel(), weights=(r[sl, None] * w).ravel(), minlength=size)
    return g.reshape(shape)


# ----------------------------------------------------------------------------
# numba implementations

if USE_NUMBA:
    njit = nb.njit(cache=True, nogil=True, fastmath=False)

    @njit
    def _fwd1(T1, c, out):
        M, n1 = T1.shape
        for j in range(M):
            acc = 0.0
            for a in range(n1):
                acc += c[a] * T1[j, a]
            out[j] = acc

    @njit
    def _fwd2(T1, T2, c, out):
        M, n1 = T1.shape
        n2 = T2.shape[1]
        for j in range(M):
            acc = 0.0
            for a in range(n1):
                t = 0.0
                base = a * n2
                for b in range(n2):
                    t += c[base + b] * T2[j, b]
                acc += T1[j, a] * t
            out[j] = acc

    @njit
    def _fwd3(T1, T2, T3, c, out):
        M, n1 = T1.shape
        n2 = T2.shape[1]
        n3 = T3.shape[1]
        for j in range(M):
            acc = 0.0
            for a in range(n1):
                ta = 0.0
                for b in range(n2):
                    tb = 0.0
                    base = (a * n2 + b) * n3
                    for e in range(n3):
                        tb += c[base + e] * T3[j, e]
                    ta += T2[j, b] * tb
                acc += T1[j, a] * ta
            out[j] = acc

    @njit
    def _adj1(T1, r, out):
        M, n1 = T1.shape
        for j in range(M):
            rj = r[j]
            for a in range(n1):
                out[a] += rj * T1[j, a]

    @njit
    def _adj2(T1, T2, r, out):
        M, n1 = T1.shape
        n2 = T2.shape[1]
        for j in range(M):
            rj = r[j]
            for a in range(n1):
                ra = rj * T1[j, a]
                base = a * n2
                for b in range(n2):
                    out[base + b] += ra * T2[j, b]

    @njit
    def _adj3(T1, T2, T3, r, out):
        M, n1 = T1.shape
        n2 = T2.shape[1]
        n3 = T3.shape[1]
        for j in range(M):
            rj = r[j]
            for a in range(n1):
                ra = rj * T1[j, a]
                for b in range(n2):
                    rb = ra * T2[j, b]
                    base = (a * n2 + b) * n3
                    for e in range(n3):
                        out[base + e] += rb * T3[j, e]

    @njit
    def _gather1(g, i1, w1, out):
        M, W = i1.shape
        for j in range(M):
            acc = 0.0
            for a in range(W):
                acc += g[i1[j, a]] * w1[j, a]
            out[j] = acc

    @njit
    def _gather2(g, i1, w1, i2, w2, out):
        M, W = i1.shape
        for j in range(M):
            acc = 0.0
            for a in range(W):
                ia = i1[j, a]
                t = 0.0
                for b in range(W):
                    t += g[ia, i2[j, b]] * w2[j, b]
                acc += w1[j, a] * t
            out[j] = acc

    @njit
    def _gather3(g, i1, w1, i2, w2, i3, w3, out):
        M, W = i1.shape
        for j in range(M):
            acc = 0.0
            for a in range(W):
                ia = i1[j, a]
                ta = 0.0
                for b in range(W):
                    ib = i2[j, b]
                    tb = 0.0
                    for e in range(W):
                        tb += g[ia, ib, i3[j, e]] * w3[j, e]
                    ta += w2[j, b] * tb
                acc += w1[j, a] * ta
            out[j] = acc

    @njit
    def _scatter1(r, g, i1, w1):
        M, W = i1.shape
        for j in range(M):
            for a in range(W):
                g[i1[j, a]] += r[j] * w1[j, a]

    @njit
    def _scatter2(r, g, i1, w1, i2, w2):
        M, W = i1.shape
        for j in range(M):
            for a in range(W):
                ra = r[j] * w1[j, a]
                ia = i1[j, a]
                for b in range(W):
                    g[ia, i2[j, b]] += ra * w2[j, b]

    @njit
    def _scatter3(r, g, i1, w1, i2, w2, i3, w3):
        M, W = i1.shape
        for j in range(M):
            for a in range(W):
                ra = r[j] * w1[j, a]
                ia = i1[j, a]
                for b in range(W):
                    rb = ra * w2[j, b]
                    ib = i2[j, b]
                    for e in range(W):
                        g[ia, ib, i3[j, e]] += rb * w3[j, e]

    _FWD = {1: _fwd1, 2: _fwd2, 3: _fwd3}
    _ADJ = {1: _adj1, 2: _adj2, 3: _adj3}
    _GATHER = {1: _gather1, 2: _gather2, 3: _gather3}
    _SCATTER = {1: _scatter1, 2: _scatter2, 3: _scatter3}


# ----------------------------------------------------------------------------
# dispatch


def forward_direct(tables, coef):
    p = len(tables)
    coef = np.ascontiguousarray(coef, dtype=np.float64)
    if USE_NUMBA and p in _FWD:
        out = np.empty(tables[0].shape[0])
        _FWD[p](*tables, coef, out)
        return out
    return np_forward_direct(tables, coef)


def adjoint_direct(tables, r):
    p = len(tables)
    r = np.ascontiguousarray(r, dtype=np.float64)
    if USE_NUMBA and p in _ADJ:
        out = np.zeros(int(np.prod([t.shape[1] for t in tables])))
        _ADJ[p](*tables, r, out)
        return out
    return np_adjoint_direct(tables, r)


def gather(grid, idx, wts):
    p = grid.ndim
    if USE_NUMBA and p in _GATHER:
        out = np.empty(idx[0].shape[0])
        args = [a for pair in zip(idx, wts) for a in pair]
        _GATHER[p](grid, *args, out)
        return out
    return np_gather(grid, idx, wts)


def scatter(r, shape, idx, wts):
    p = len(shape)
    r = np.ascontiguousarray(r, dtype=np.float64)
    if USE_NUMBA and p in _SCATTER:
        g = np.zeros(shape)
        args = [a for pair in zip(idx, wts) for a in pair]
        _SCATTER[p](r, g, *args)
        return g
    return np_scatter(r, shape, idx, wts)

"""Nonequispaced fast cosine transform for one ANOVA term.

The cosine sum ``sum_k c_k prod_s cos(k_s theta_s)`` is an even trigonometric
polynomial in the angles, so it is evaluated as a type-2 NFFT with
Kaiser-Bessel gridding on an oversampled grid, with the FFT replaced by a
type-I DCT on the folded half grid.  The adjoint is the exact transpose of
the same factorisation.
"""

import math

import numpy as np
import scipy.fft
from scipy.special import i0

from anovacheb import _kernels
from anovacheb.errors import ShapeError, UsageError

DEFAULT_SIGMA = 2.0
DEFAULT_CUTOFF = 6


def kaiser_bessel(dist, m, b):
    """Window values at grid distances ``dist`` (in grid units); zero outside ``|dist| < m``."""
    arg = m * m - dist * dist
    out = np.zeros_like(dist)
    inside = arg > 0
    z = np.sqrt(arg[inside])
    out[inside] = np.sinh(b * z) / (math.pi * z)
    out[arg == 0] = b / math.pi
    return out


def kaiser_bessel_hat(k, n, m, b):
    """Scaled Fourier transform of :func:`kaiser_bessel`, ``n * phi_hat(k)``."""
    return i0(m * np.sqrt(b * b - (2.0 * math.pi * np.asarray(k, dtype=np.float64) / n) ** 2))


class WindowPlan:
    """Precomputed gridding data for one term.

    Parameters
    ----------
    angles : (M, p) array
        ``arccos`` of the node coordinates in the term's variables.
    N : int
        Bandlimit; frequencies ``1..N-1`` per variable.
    sigma : float
        Oversampling factor, at least 2.
    m : int
        Window half width in grid points.
    """

    def __init__(self, angles, N, sigma=DEFAULT_SIGMA, m=DEFAULT_CUTOFF):
        angles = np.atleast_2d(np.asarray(angles, dtype=np.float64))
        if sigma < 2.0:
            raise UsageError(f"oversampling factor must be >= 2, got {sigma}")
        if m < 1:
            raise UsageError(f"window cutoff must be >= 1, got {m}")
        self.p = angles.shape[1]
        self.M = angles.shape[0]
        self.N = int(N)
        self.sigma = float(sigma)
        self.m = int(m)
        self.n = 2 * int(math.ceil(sigma * self.N))
        self.L = self.n // 2 + 1
        self.b = math.pi * (2.0 - 1.0 / sigma)
        self.phi_hat = kaiser_bessel_hat(np.arange(1, self.N), self.n, self.m, self.b)

        x = angles / (2.0 * math.pi)
        offsets = np.arange(-self.m, self.m + 2)
        idx, wts = [], []
        for s in range(self.p):
            base = np.floor(self.n * x[:, s]).astype(np.int64)
            ell = base[:, None] + offsets[None, :]
            w = kaiser_bessel(self.n * x[:, s, None] - ell, self.m, self.b)
            ell = np.mod(ell, self.n)
            ell = np.where(ell > self.n // 2, self.n - ell, ell)
            idx.append(np.ascontiguousarray(ell))
            wts.append(np.ascontiguousarray(w))
        self.idx = tuple(idx)
        self.wts = tuple(wts)
        self._grid_shape = (self.L,) * self.p
        scale = math.sqrt(2.0) ** self.p
        deconv = np.ones((self.N - 1,) * self.p)
        for s in range(self.p):
            view = [None] * self.p
            view[s] = slice(None)
            deconv = deconv / self.phi_hat[tuple(view)]
        self._deconv = scale * deconv
        inner = np.full(self.L, 0.5)
        inner[0] = inner[-1] = 1.0
        self._fold = inner

    def _check(self, c):
        c = np.asarray(c, dtype=np.float64)
        if c.size != (self.N - 1) ** self.p:
            raise ShapeError(f"coefficient block of size {c.size}, expected {(self.N - 1) ** self.p}")
        return c.reshape((self.N - 1,) * self.p)

    def forward(self, coeffs):
        c = self._check(coeffs)
        A = np.zeros(self._grid_shape)
        box = (slice(1, self.N),) * self.p
        A[box] = c * self._deconv / 2.0 ** self.p
        g = scipy.fft.dctn(A, type=1, workers=1)
        return _kernels.gather(g, self.idx, self.wts)

    def adjoint(self, r):
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (self.M,):
            raise ShapeError(f"residual has shape {r.shape}, expected ({self.M},)")
        G = _kernels.scatter(r, self._grid_shape, self.idx, self.wts)
        for s in range(self.p):
            view = [None] * self.p
            view[s] = slice(None)
            G = G * self._fold[tuple(view)]
        y = scipy.fft.dctn(G, type=1, workers=1)
        box = (slice(1, self.N),) * self.p
        return (y[box] * self._deconv).ravel()

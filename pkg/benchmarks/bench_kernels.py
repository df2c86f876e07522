"""Time the numba kernels against the numpy fallback.

Kernel rows call both implementations in one process (the ``np_*`` functions
are always importable).  The end-to-end row runs a full fit in two child
processes, one with ``ANOVACHEB_NUMBA=0``.

    python benchmarks/bench_kernels.py [--M 20000] [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from anovacheb import _kernels as K


def best_of(fn, repeat):
    fn()  # warm up (jit compilation happens here)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_rows(M, repeat, rng):
    rows = []
    for widths in ((63,), (19, 7), (7, 7, 7)):
        tables = tuple(np.sqrt(2) * np.cos(np.pi * rng.random((M, 1)) * np.arange(1, w + 1)) for w in widths)
        c = rng.standard_normal(int(np.prod(widths)))
        r = rng.standard_normal(M)
        label = "x".join(map(str, widths))
        rows.append((f"forward_direct {label}", best_of(lambda: K.forward_direct(tables, c), repeat),
                     best_of(lambda: K.np_forward_direct(tables, c), repeat)))
        rows.append((f"adjoint_direct {label}", best_of(lambda: K.adjoint_direct(tables, r), repeat),
                     best_of(lambda: K.np_adjoint_direct(tables, r), repeat)))
    for p, L in ((1, 256), (2, 64), (3, 24)):
        W = 14  # 2m + 2 window taps for m = 6
        idx = tuple(rng.integers(0, L, (M, W)) for _ in range(p))
        wts = tuple(rng.standard_normal((M, W)) for _ in range(p))
        grid = rng.standard_normal((L,) * p)
        r = rng.standard_normal(M)
        rows.append((f"gather p={p}", best_of(lambda: K.gather(grid, idx, wts), repeat),
                     best_of(lambda: K.np_gather(grid, idx, wts), repeat)))
        rows.append((f"scatter p={p}", best_of(lambda: K.scatter(r, (L,) * p, idx, wts), repeat),
                     best_of(lambda: K.np_scatter(r, (L,) * p, idx, wts), repeat)))
    return rows


_FIT = """
import json, time, numpy as np
from anovacheb import _kernels, testbench as tb
from anovacheb.core import Dataset
from anovacheb.pipeline import fit_initial
X = tb.sample_chebyshev(8, {M}, 0)
data = Dataset(X, tb.bspline_test_function(X.nodes))
fit_initial(data, 2, (8, 4))
t = time.perf_counter()
fit_initial(data, 2, (20, 8))
print(json.dumps({{"backend": _kernels.backend(), "seconds": time.perf_counter() - t}}))
"""


def end_to_end(M):
    out = {}
    for flag in ("1", "0"):
        env = dict(os.environ, ANOVACHEB_NUMBA=flag)
        proc = subprocess.run([sys.executable, "-c", _FIT.format(M=M)], env=env, capture_output=True,
                              text=True, check=True)
        doc = json.loads(proc.stdout)
        out[doc["backend"]] = doc["seconds"]
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--M", type=int, default=20000, help="number of nodes")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-fit", action="store_true", help="skip the end-to-end fit")
    args = ap.parse_args(argv)
    if K.nb is None:
        print("numba is not available (or ANOVACHEB_NUMBA=0); both columns time the numpy path")
    rows = kernel_rows(args.M, args.repeat, np.random.default_rng(0))
    print(f"{'kernel':<26}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, t_nb, t_np in rows:
        print(f"{name:<26}{t_nb * 1e3:>12.2f}{t_np * 1e3:>12.2f}{t_np / t_nb:>10.1f}")
    if not args.skip_fit:
        e2e = end_to_end(10000)
        line = ", ".join(f"{k} {v:.2f} s" for k, v in sorted(e2e.items()))
        print(f"fit d=8, N=(20,8), M=10000: {line}")


if __name__ == "__main__":
    main()

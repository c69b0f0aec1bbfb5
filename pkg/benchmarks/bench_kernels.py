"""Compiled versus pure-Python kernels.

Run with ``python benchmarks/bench_kernels.py``; prints timings and the
maximum deviation between the two backends for each kernel.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from blochfx import _kernels_py

try:
    from blochfx import _kernels
except ImportError:  # extension not built
    _kernels = None


def _cn_case(n, rng):
    h = 2 * np.pi / 16
    diag = 2 / h**2 + np.cos(h * np.arange(n)) + 0j
    up = -np.exp(0.1j * np.sin(np.arange(n))) / h**2
    psi = rng.normal(size=n) + 1j * rng.normal(size=n)
    return diag, up, psi, 0.5 * 0.1 / (4 / h**2)


def _pn_case(ny, nxi, n, rng):
    ys = 2 * np.pi * np.arange(ny) / ny
    xis = np.fft.fftfreq(nxi, 1.0 / nxi)
    F = rng.normal(size=(ny, nxi, n)) + 1j * rng.normal(size=(ny, nxi, n))
    coef = rng.normal(size=nxi) + 1j * rng.normal(size=nxi)
    return ys, xis, F, coef


def best(fn, repeat=5):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    if _kernels is None:
        print("compiled extension not available; nothing to compare")
        return 1
    print(f"{'kernel':<28}{'python [ms]':>14}{'cython [ms]':>14}{'speedup':>10}{'max dev':>12}")
    for n, steps in ((1024, 200), (8192, 200), (32768, 50)):
        diag, up, psi, tau = _cn_case(n, rng)
        a = _kernels_py.cn_cyclic(diag, up, psi, tau, steps)
        b = _kernels.cn_cyclic(diag, up, psi, tau, steps)
        tp = best(lambda: _kernels_py.cn_cyclic(diag, up, psi, tau, steps), args.repeat)
        tc = best(lambda: _kernels.cn_cyclic(diag, up, psi, tau, steps), args.repeat)
        dev = np.max(np.abs(a - b)) / np.max(np.abs(a))
        print(f"{f'cn_cyclic n={n} x{steps}':<28}{1e3 * tp:>14.2f}{1e3 * tc:>14.2f}{tp / tc:>10.1f}{dev:>12.1e}")
    for ny, nxi, n in ((128, 128, 16), (256, 256, 32)):
        case = _pn_case(ny, nxi, n, rng)
        a = _kernels_py.pn_contract(*case)
        b = np.asarray(_kernels.pn_contract(*case))
        tp = best(lambda: _kernels_py.pn_contract(*case), args.repeat)
        tc = best(lambda: _kernels.pn_contract(*case), args.repeat)
        dev = np.max(np.abs(a - b)) / np.max(np.abs(a))
        print(f"{f'pn_contract {ny}x{nxi}x{n}':<28}{1e3 * tp:>14.2f}{1e3 * tc:>14.2f}{tp / tc:>10.1f}{dev:>12.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

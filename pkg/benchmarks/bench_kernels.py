"""Compiled vs pure-Python kernels on identical inputs.

Run with ``python3 benchmarks/bench_kernels.py [--repeat R]``.  Each kernel
is called once to trigger compilation, then timed; results of the two
variants are checked for equality before timing is reported.
"""

import argparse
import time

import numpy as np

from kinising import kernels
from kinising._jit import HAS_NUMBA
from kinising.birth_death import build_chain, hardy_scan
from kinising.glauber import _class_state
from kinising.lattice import LatticeDomain, SpinConfig
from kinising.rates import RateModel
from kinising.tridiag import bisect_eigenvalue


def _timeit(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def case_apply_updates(n_updates=200_000):
    dom = LatticeDomain(2, 32)
    table = RateModel("heat-bath", 0.6).plus_table(2)
    rng = np.random.default_rng(1)
    sites, U = rng.integers(0, dom.n_sites, n_updates), rng.random(n_updates)
    start = SpinConfig.all_minus(dom).padded()

    def make(k):
        def run():
            pad = start.copy()
            k(pad, dom.site_pad, dom.neighbor_offsets, table, sites, U)
            return pad
        return run
    return "apply_updates 32x32", make(kernels.apply_updates.py), make(kernels.apply_updates.jit)


def case_nfold(n_uniforms=100_000):
    dom = LatticeDomain(2, 16)
    crate = RateModel("metropolis", 0.4).class_rates(2).ravel()
    rng = np.random.default_rng(2)
    u = rng.random(n_uniforms)
    start = SpinConfig.random(dom, rng).padded()

    def make(k):
        def run():
            pad = start.copy()
            cls, members, counts, pos = _class_state(dom, pad)
            cap = n_uniforms // 2
            ev_t, ev_s, ev_p = np.empty(cap), np.empty(cap, dtype=np.int64), np.empty(cap, dtype=np.int8)
            k(pad, dom.site_pad, dom.pad_site, dom.neighbor_offsets, crate, cls, members, counts, pos,
              0.0, 1e9, u, ev_t, ev_s, ev_p)
            return pad
        return run
    return "nfold_run 16x16", make(kernels.nfold_run.py), make(kernels.nfold_run.jit)


def case_hardy(N=24):
    ch = build_chain(2, N)
    m = ch.n_states
    z = np.zeros(m)

    def make(k):
        def run():
            bp, bm = np.empty(m), np.empty(m)
            ap, am = np.empty(m, dtype=np.int64), np.empty(m, dtype=np.int64)
            with np.errstate(divide="ignore"):
                k(ch.log_resistance, ch.log_tail, ch.log_head, z, z, bp, bm, ap, am)
            return np.maximum(bp, bm)
        return run
    return f"hardy_scan M={m}", make(hardy_scan.py), make(hardy_scan.jit)


def case_bisect(n=4097):
    rng = np.random.default_rng(3)
    diag = rng.random(n) + 2.0
    off_sq = rng.random(n - 1)

    def make(k):
        return lambda: k(diag, off_sq, 1, -10.0, 10.0, 200)
    return f"bisect_eigenvalue n={n}", make(bisect_eigenvalue.py), make(bisect_eigenvalue.jit)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not HAS_NUMBA:
        print("numba is not installed; both variants are pure Python")
    print(f"{'kernel':<28}{'python [s]':>12}{'numba [s]':>12}{'speed-up':>10}")
    for case in (case_apply_updates, case_nfold, case_hardy, case_bisect):
        name, py, jit = case()
        jit()  # compile
        t_py, r_py = _timeit(py, 1)
        t_jit, r_jit = _timeit(jit, args.repeat)
        assert np.allclose(r_py, r_jit, rtol=0, atol=1e-12), f"{name}: variants disagree"
        print(f"{name:<28}{t_py:>12.4f}{t_jit:>12.4f}{t_py / t_jit:>9.0f}x")


if __name__ == "__main__":
    main()

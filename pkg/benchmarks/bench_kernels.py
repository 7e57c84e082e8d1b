"""Benchmark the compiled tree kernels against the NumPy fallback.

Times the raw per-row kernels at several problem sizes, then an end-to-end
MCMC run under each backend (the sampler resolves kernels through the
anovatrees._kernels namespace, so the backend can be swapped in-process).

Usage: python benchmarks/bench_kernels.py [--quick]
"""

import argparse
import time

import numpy as np

from anovatrees import _kernels
from anovatrees._kernels import _py
from anovatrees.priors import Hyperparams
from anovatrees.sampler import ChainConfig, run_chain
from anovatrees.synthetic import SyntheticSpec, generate

try:
    from anovatrees._kernels import _core
except ImportError:
    _core = None


def time_call(fn, *args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_row_kernels(quick):
    sizes = [(1000, 1), (1000, 2), (1000, 4)]
    if not quick:
        sizes += [(10_000, 2), (100_000, 2)]
    repeat = 5 if quick else 30
    rng = np.random.default_rng(0)
    print(f"{'rows':>8} {'order':>5} {'python (us)':>12} {'cython (us)':>12} "
          f"{'speedup':>8}")
    for n, d in sizes:
        x = rng.random((n, max(d, 2)))
        cols = np.arange(d, dtype=np.int64)
        splits = rng.random(d)
        levs = -np.exp(rng.standard_normal(d))
        t_py = time_call(_py.row_cells, x, cols, splits, levs, repeat=repeat)
        if _core is None:
            print(f"{n:>8} {d:>5} {t_py * 1e6:>12.1f} {'n/a':>12} {'':>8}")
            continue
        t_cy = time_call(_core.row_cells, x, cols, splits, levs,
                         repeat=repeat)
        print(f"{n:>8} {d:>5} {t_py * 1e6:>12.1f} {t_cy * 1e6:>12.1f} "
              f"{t_py / t_cy:>7.1f}x")


def bench_end_to_end(quick):
    n_iter = 100 if quick else 500
    sd = generate(SyntheticSpec(n=1000 if not quick else 200, p=10,
                                snr=5.0, seed=0))
    h = Hyperparams(T_max=50)
    cfg = ChainConfig(n_iter=n_iter, burn_in=n_iter // 2, seed=1)

    backends = [("python", _py)] + ([("cython", _core)] if _core else [])
    saved = (_kernels.row_cells, _kernels.row_mults)
    results = {}
    try:
        for name, impl in backends:
            _kernels.row_cells = impl.row_cells
            _kernels.row_mults = impl.row_mults
            t0 = time.perf_counter()
            dr = run_chain(sd.data, h, cfg)
            results[name] = (time.perf_counter() - t0, len(dr.draws))
    finally:
        _kernels.row_cells, _kernels.row_mults = saved
    for name, (secs, n_draws) in results.items():
        per = secs / n_iter * 1e3
        print(f"chain [{name:>6}]: {secs:.2f}s for {n_iter} sweeps "
              f"({per:.2f} ms/sweep, {n_draws} draws)")
    if len(results) == 2:
        print(f"end-to-end speedup: "
              f"{results['python'][0] / results['cython'][0]:.2f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--quick", action="store_true",
                        help="small sizes, few repeats")
    args = parser.parse_args()
    print(f"active backend at import: {_kernels.BACKEND}")
    if _core is None:
        print("compiled kernels not built; timing the fallback only")
    bench_row_kernels(args.quick)
    bench_end_to_end(args.quick)


if __name__ == "__main__":
    main()

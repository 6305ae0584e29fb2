"""Time the compiled kernels against their numpy twins.

    python benchmarks/bench_core.py            # default sizes
    python benchmarks/bench_core.py --n 400 --repeat 20

Each row reports the best-of-``repeat`` wall time per call for both backends,
the speedup, and the largest absolute difference between their outputs.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from hrmsbo import _core_py

try:
    from hrmsbo import _core
except ImportError:  # extension not built
    _core = None


def _cases(n: int, d: int, rng: np.random.Generator):
    X = np.ascontiguousarray(rng.random((n, d)))
    X2 = np.ascontiguousarray(rng.random((n // 2, d)))
    inv_ls = np.ascontiguousarray(1.0 / rng.uniform(0.1, 1.0, d))
    W = rng.standard_normal((n, n))
    W = np.ascontiguousarray(W + W.T)
    m = 20 * n
    levels = rng.integers(0, 8, size=(m, d))
    sizes = np.ascontiguousarray(0.5 * np.sqrt(np.sum(9.0 ** -np.sort(levels, axis=1).astype(float), axis=1)))
    fvals = np.ascontiguousarray(rng.standard_normal(m))
    fmin = float(fvals.min())
    margin = 1e-4 * float(fvals.max() - fmin)
    return {
        f"matern32_gram n={n} d={d}": ("matern32_gram", (X, inv_ls, 1.3)),
        f"matern32_cross {n}x{n // 2}": ("matern32_cross", (X, X2, inv_ls, 1.3)),
        f"matern32_ls_grads n={n}": ("matern32_ls_grads", (X, inv_ls, 1.3)),
        f"matern32_ls_grad_contract n={n}": ("matern32_ls_grad_contract", (X, inv_ls, 1.3, W)),
        f"potentially_optimal m={m}": ("potentially_optimal", (sizes, fvals, fmin, margin)),
    }


def _best(fn, args, repeat: int) -> float:
    fn(*args)
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--n", type=int, default=200, help="points per kernel matrix")
    ap.add_argument("--d", type=int, default=2, help="input dimension")
    ap.add_argument("--repeat", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if _core is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")
        return 1

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<36}{'cython ms':>11}{'numpy ms':>11}{'speedup':>9}{'max |diff|':>12}")
    for label, (name, fargs) in _cases(args.n, args.d, rng).items():
        fast, slow = getattr(_core, name), getattr(_core_py, name)
        t_fast = _best(fast, fargs, args.repeat)
        t_slow = _best(slow, fargs, args.repeat)
        a, b = np.asarray(fast(*fargs)), np.asarray(slow(*fargs))
        diff = float(np.max(np.abs(a.astype(float) - b.astype(float)))) if a.shape == b.shape else float("inf")
        print(f"{label:<36}{1e3 * t_fast:>11.3f}{1e3 * t_slow:>11.3f}{t_slow / t_fast:>8.1f}x{diff:>12.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

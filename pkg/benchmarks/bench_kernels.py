"""Compare the compiled and numpy oracle kernels on identical inputs.

    python benchmarks/bench_kernels.py --n 5000 --points 40401 --repeat 3
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from laplacecert._kernels import _pykernels

try:
    from laplacecert._kernels import _ckernels
except ImportError:
    _ckernels = None


def best_time(fn, repeat: int) -> tuple[float, np.ndarray]:
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--n", type=int, default=5000, help="observations / quadrature nodes")
    parser.add_argument("--p", type=int, default=2, help="parameter dimension")
    parser.add_argument("--points", type=int, default=40401, help="evaluation points")
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    X = np.ascontiguousarray(rng.uniform(-1, 1, (args.n, args.p)))
    y = (rng.random(args.n) < 0.5).astype(float)
    P = np.ascontiguousarray(rng.normal(0, 0.1, (args.points, args.p)))
    F = np.ascontiguousarray(rng.uniform(-1.4, 1.4, (args.n, args.p)))
    logw = np.log(np.full(args.n, 1.0 / args.n))

    cases = {
        "logistic_loglik_many": (X, y, P),
        "tilted_logsumexp_many": (F, logw, P),
    }
    print(f"{'kernel':24s} {'python s':>10s} {'cython s':>10s} {'speedup':>8s} {'max rel diff':>13s}")
    for name, inputs in cases.items():
        t_py, out_py = best_time(lambda: getattr(_pykernels, name)(*inputs), args.repeat)
        if _ckernels is None:
            print(f"{name:24s} {t_py:10.4f} {'n/a':>10s} {'n/a':>8s} {'n/a':>13s}")
            continue
        t_c, out_c = best_time(lambda: getattr(_ckernels, name)(*inputs), args.repeat)
        out_c = np.asarray(out_c)
        rel = float(np.max(np.abs(out_c - out_py) / np.maximum(1.0, np.abs(out_py))))
        print(f"{name:24s} {t_py:10.4f} {t_c:10.4f} {t_py / t_c:8.2f} {rel:13.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

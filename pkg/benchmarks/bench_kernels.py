"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--threads N]
"""
import argparse
import timeit

import numpy as np

from sealtw import _pykernels

try:
    from sealtw import _ckernels
except ImportError:
    _ckernels = None


def cases(rng, threads):
    M, K = 64, 200
    A1 = np.triu(rng.random((M, M)) < 0.05, k=1).astype(float)
    B = rng.random((M, K))
    V = rng.normal(size=(M, K))
    L = rng.random((500, M + K))
    w = rng.random(M + K)
    E = rng.random((M + K, K))
    D = rng.normal(size=(512, K))
    small = rng.normal(size=(8, 100))
    return {
        "project_simplex_columns 8x100": lambda k: k.project_simplex_columns(small),
        "absorb 64x200": lambda k: k.absorb(A1, B),
        "project_simplex_columns 64x200": lambda k: k.project_simplex_columns(V),
        "weighted_l1_cdist 500x500x264": lambda k: k.weighted_l1_cdist(L, L, w, threads),
        "seal_batch 512x200": lambda k: k.seal_batch(E, w, D, threads),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--threads", type=int, default=1)
    args = p.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases(rng, args.threads).items():
        py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat))
        if _ckernels is None:
            print(f"{name:34s} {1e3 * py:10.3f} {'n/a':>10s}")
            continue
        cy = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat))
        print(f"{name:34s} {1e3 * py:10.3f} {1e3 * cy:10.3f} {py / cy:7.1f}x")


if __name__ == "__main__":
    main()

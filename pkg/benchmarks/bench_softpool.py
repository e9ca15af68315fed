"""Time the compiled SoftPool kernels against the numpy implementation.

    python benchmarks/bench_softpool.py [--batch 256] [--size 16] [--repeat 20]
"""
import argparse
import timeit

import numpy as np

from protobft import _softpool_py

try:
    from protobft import _softpool_ext
except ImportError:
    _softpool_ext = None


def bench(backend, maps, up, k, stride, repeat):
    fwd = min(timeit.repeat(lambda: backend.pool_forward(maps, k, stride), number=1, repeat=repeat))
    bwd = min(timeit.repeat(lambda: backend.pool_backward(maps, k, stride, up), number=1, repeat=repeat))
    return fwd, bwd


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--size", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    maps = rng.normal(size=(args.batch, args.size, args.size)) * 3
    backends = [("numpy", _softpool_py)]
    if _softpool_ext is None:
        print("compiled extension not built; timing numpy only")
    else:
        backends.append(("compiled", _softpool_ext))

    print(f"{'k':>2} {'stride':>6} {'backend':>9} {'forward ms':>11} {'backward ms':>12}")
    for k, stride in [(2, 2), (2, 1), (3, 3), (3, 1)]:
        orows = (args.size - k) // stride + 1
        up = rng.normal(size=(args.batch, orows, orows))
        results = {}
        for name, mod in backends:
            results[name] = bench(mod, maps, up, k, stride, args.repeat)
            f, b = results[name]
            print(f"{k:>2} {stride:>6} {name:>9} {f * 1e3:>11.3f} {b * 1e3:>12.3f}")
        if len(results) == 2:
            (nf, nb), (cf, cb) = results["numpy"], results["compiled"]
            print(f"{'':>19} speedup {nf / cf:>9.1f}x {nb / cb:>11.1f}x")


if __name__ == "__main__":
    main()

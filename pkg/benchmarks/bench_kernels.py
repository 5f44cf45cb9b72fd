"""Time the compiled and numpy kernel backends on the same inputs.

    python3 benchmarks/bench_kernels.py [--tiles 500] [--repeat 5]
"""

import argparse
import time

import numpy as np

from cmtssl import kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--tiles", type=int, default=500)
    ap.add_argument("--bands", type=int, default=32)
    ap.add_argument("--pixels", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    stack = rng.normal(size=(args.tiles, 16, 16, args.bands))
    truth = rng.integers(-1, 9, size=args.pixels)
    pred = rng.integers(0, 9, size=args.pixels)

    impls = kernels.implementations()
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<18}{'backend':<10}{'seconds':>10}{'speedup':>10}")
    for name, call in (
        ("batch_scores", lambda impl: kernels.batch_scores(stack, "average", impl)),
        ("confusion_counts", lambda impl: kernels.confusion_counts(truth, pred, -1, 9, impl)),
    ):
        base, ref = best_of(lambda: call(impls["python"]), args.repeat)
        print(f"{name:<18}{'python':<10}{base:>10.4f}{1.0:>10.2f}")
        for backend, impl in impls.items():
            if backend == "python":
                continue
            t, out = best_of(lambda: call(impl), args.repeat)
            assert np.allclose(out, ref), f"{backend} disagrees with python on {name}"
            print(f"{name:<18}{backend:<10}{t:>10.4f}{base / t:>10.2f}")


if __name__ == "__main__":
    main()

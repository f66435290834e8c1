"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run:  python benchmarks/bench_kernels.py
(The numba side needs GRIDPATCH_NUMBA unset or 1 at interpreter start.)
"""

import time

import numpy as np

from gridpatch.kernels import implementations


def bench(fn, args, *, repeat=200, warmup=3):
    for _ in range(warmup):
        fn(*args)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat * 1e3  # ms


def make_cases(rng):
    # conv1d at forecaster scale (56 days x 32 channels, kernel 3)
    x = rng.normal(size=(56, 32))
    w = rng.normal(size=(3, 32, 32))
    g = rng.normal(size=(56, 32))

    # power flow at default case scale (126 buses)
    n = 126
    gm = rng.normal(size=(n, n)) * 0.1
    bm = rng.normal(size=(n, n)) * 1.0
    gm = (gm + gm.T) / 2
    bm = (bm + bm.T) / 2
    vm = 1.0 + 0.02 * rng.normal(size=n)
    va = 0.05 * rng.normal(size=n)
    p = rng.normal(size=n)
    q = rng.normal(size=n)
    pvpq = np.arange(1, n, dtype=np.int64)
    pq = np.arange(60, n, dtype=np.int64)
    return {
        "conv1d_forward": (x, w),
        "conv1d_backward": (x, w, g),
        "pf_injections": (gm, bm, vm, va),
        "pf_jacobian": (gm, bm, vm, va, p, q, pvpq, pq),
    }


def main():
    rng = np.random.default_rng(0)
    cases = make_cases(rng)
    impls = implementations()
    if "numba" not in impls:
        print("numba backend unavailable (GRIDPATCH_NUMBA=0 or numba missing); "
              "benchmarking numpy only")
    print(f"{'kernel':<18}" + "".join(f"{b:>12}" for b in impls) +
          ("{:>10}".format("speedup") if len(impls) > 1 else ""))
    for name, args in cases.items():
        times = {b: bench(impls[b][name], args) for b in impls}
        row = f"{name:<18}" + "".join(f"{times[b]:>10.3f}ms" for b in impls)
        if len(times) > 1:
            row += f"{times['numpy'] / times['numba']:>9.1f}x"
        print(row)
        if len(impls) > 1:
            a = impls["numpy"][name](*args)
            b = impls["numba"][name](*args)
            a = a if isinstance(a, np.ndarray) else np.concatenate([x.ravel() for x in a])
            b = b if isinstance(b, np.ndarray) else np.concatenate([x.ravel() for x in b])
            worst = float(np.max(np.abs(a - b)))
            if worst > 1e-9:
                print(f"  WARNING: backends disagree by {worst:.2e}")


if __name__ == "__main__":
    main()

"""Compare the compiled activation kernels against the pure-numpy fallback.

Run directly:

    python3 benchmarks/bench_backends.py [--sizes 1000,100000] [--repeats 200]

Both backends are imported explicitly, so the benchmark works regardless of
which one the package selected at import time.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from geohnn._backend import kernels_py


def _load_compiled():
    try:
        from geohnn._backend import _kernels_c
        return _kernels_c
    except ImportError:
        return None


KERNELS = [
    ("tanh_fwd", lambda k, x, g: k.tanh_fwd(x)),
    ("tanh_bwd", lambda k, x, g: k.tanh_bwd(np.tanh(x), g)),
    ("softplus_fwd", lambda k, x, g: k.softplus_fwd(x)),
    ("softplus_bwd", lambda k, x, g: k.softplus_bwd(x, g)),
    ("elu_bij_fwd", lambda k, x, g: k.elu_bij_fwd(x)),
    ("elu_bij_inv", lambda k, x, g: k.elu_bij_inv(np.abs(x))),
    ("elu_bij_bwd", lambda k, x, g: k.elu_bij_bwd(x, g)),
]


def bench(kernel_module, name, fn, x, g, repeats):
    fn(kernel_module, x, g)  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn(kernel_module, x, g)
    return (time.perf_counter() - t0) / repeats


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--sizes", default="1000,100000")
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    compiled = _load_compiled()
    if compiled is None:
        print("compiled backend unavailable; showing pure-python timings only")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<14} {'size':>9} {'python (us)':>12} {'compiled (us)':>14} {'speedup':>8}")
    for size in sizes:
        x = rng.normal(size=size)
        g = rng.normal(size=size)
        for name, fn in KERNELS:
            t_py = bench(kernels_py, name, fn, x, g, args.repeats)
            if compiled is not None:
                t_c = bench(compiled, name, fn, x, g, args.repeats)
                print(f"{name:<14} {size:>9} {t_py * 1e6:>12.2f} {t_c * 1e6:>14.2f} "
                      f"{t_py / t_c:>7.2f}x")
            else:
                print(f"{name:<14} {size:>9} {t_py * 1e6:>12.2f} {'-':>14} {'-':>8}")


if __name__ == "__main__":
    main()

"""Compare the compiled kernels with their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N]

Prints the median wall time per call for each kernel and backend, and the
speedup of the compiled version.  Exits with an error when the extension is
not built.
"""

import argparse
import statistics
import time

import numpy as np

from svtr2 import _kernels_py

try:
    from svtr2 import _kernels
except ImportError:  # pragma: no cover - depends on the build
    _kernels = None


def _median_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def ctc_case(rng, T, C, L):
    x = rng.normal(size=(T, C))
    logp = x - np.log(np.exp(x).sum(axis=1, keepdims=True))
    label = rng.integers(0, C - 1, size=L).astype(np.int64)
    return lambda impl: impl.ctc_forward_backward(logp, label, C - 1)


def layer_norm_case(rng, n, d, dtype):
    x = rng.normal(size=(n, d)).astype(dtype)
    gain, bias = np.ones(d, dtype), np.zeros(d, dtype)
    g = rng.normal(size=(n, d)).astype(dtype)
    out, xhat, rstd = np.empty_like(x), np.empty_like(x), np.empty(n, dtype)
    gx, gg, gb = np.empty_like(x), np.zeros(d), np.zeros(d)

    def run(impl):
        impl.layer_norm_forward(x, gain, bias, 1e-6, out, xhat, rstd)
        impl.layer_norm_backward(g, xhat, rstd, gain, gx, gg, gb)
    return run


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=20)
    args = parser.parse_args()
    if _kernels is None:
        raise SystemExit("svtr2._kernels is not built; run `pip install -e . --no-build-isolation` first")
    rng = np.random.default_rng(0)
    cases = [
        ("ctc T=32 C=13 L=8 (Nano R4 x4)", ctc_case(rng, 32, 13, 8)),
        ("ctc T=56 C=37 L=25 (max label)", ctc_case(rng, 56, 37, 25)),
        ("ctc T=256 C=37 L=25", ctc_case(rng, 256, 37, 25)),
        ("layer_norm+grad 4096x128 f32", layer_norm_case(rng, 4096, 128, np.float32)),
        ("layer_norm+grad 16384x32 f32", layer_norm_case(rng, 16384, 32, np.float32)),
        ("layer_norm+grad 4096x128 f64", layer_norm_case(rng, 4096, 128, np.float64)),
    ]
    print(f"{'kernel':34s} {'cython ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, run in cases:
        fast = _median_time(lambda: run(_kernels), args.repeat)
        slow = _median_time(lambda: run(_kernels_py), args.repeat)
        print(f"{name:34s} {fast * 1e3:10.3f} {slow * 1e3:10.3f} {slow / fast:7.1f}x")


if __name__ == "__main__":
    main()

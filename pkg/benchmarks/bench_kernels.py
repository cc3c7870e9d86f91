"""Compare the numba and numpy kernel backends.

Times each hot kernel on both backends at a few sizes, then runs one
end-to-end ``protofsl evaluate`` per backend in a subprocess, switching
with ``PROTOFSL_DISABLE_NUMBA``.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--skip-end-to-end]
"""

import argparse
import importlib
import os
import subprocess
import sys
import tempfile
import time

import numpy as np

numpy_impl = importlib.import_module("protofsl.kernels.numpy_impl")
numba_impl = importlib.import_module("protofsl.kernels.numba_impl")


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def kernel_cases(n, d, k):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((n, d))
    Q = rng.standard_normal((4 * n, d))
    D = numpy_impl.pairwise_distances(X, X)
    return {
        "pairwise_distances": lambda m: m.pairwise_distances(Q, X),
        "knn_rows": lambda m: m.knn_rows(D, k),
        "knn_graph": lambda m: m.knn_graph(D, k),
        "neg_exp_normalize": lambda m: m.neg_exp_normalize(D),
    }


def bench_kernels(repeat):
    print(f"{'kernel':<20} {'n':>5} {'d':>4} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for n, d in [(100, 32), (500, 64), (1000, 512)]:
        for name, call in kernel_cases(n, d, k=5).items():
            call(numba_impl)  # compile outside the timing
            t_np = best_of(lambda: call(numpy_impl), repeat)
            t_nb = best_of(lambda: call(numba_impl), repeat)
            print(f"{name:<20} {n:>5} {d:>4} {t_np * 1e3:>10.3f} {t_nb * 1e3:>10.3f} {t_np / t_nb:>7.2f}x")


def bench_end_to_end():
    args = [sys.executable, "-m", "protofsl", "evaluate", "--profile", "synthetic", "--dim", "32",
            "--latent-dim", "4", "--base", "80", "--novel", "20", "--spread", "2.0", "--shots", "1,5",
            "--trials", "5", "--seed", "1"]
    outputs = {}
    for label, flag in [("numba", "0"), ("numpy", "1")]:
        env = dict(os.environ, PROTOFSL_DISABLE_NUMBA=flag)
        with tempfile.TemporaryDirectory() as out:
            start = time.perf_counter()
            subprocess.run(args + ["--out", out], env=env, check=True, capture_output=True)
            elapsed = time.perf_counter() - start
            with open(os.path.join(out, "results.csv"), "rb") as fh:
                outputs[label] = fh.read()
        print(f"end-to-end evaluate, {label:<5} backend: {elapsed:.2f}s (includes interpreter start and jit)")
    print("results.csv identical across backends:", outputs["numba"] == outputs["numpy"])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--skip-end-to-end", action="store_true")
    args = ap.parse_args()
    bench_kernels(args.repeat)
    if not args.skip_end_to_end:
        bench_end_to_end()


if __name__ == "__main__":
    main()

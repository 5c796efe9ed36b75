"""Compare the numba and numpy statevector kernels.

    python3 benchmarks/bench_kernels.py [--qubits 16] [--repeat 5]

Both kernel sets are imported directly, so the QHPC_NO_NUMBA flag does not
matter here. Numba timings exclude the first (compiling) call.
"""
import argparse
import math
import time

import numpy as np

from qhpc.qsim.kernels import NUMBA_KERNELS, NUMPY_KERNELS


def random_state(n, seed=0):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return v / np.linalg.norm(v)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n):
    s = 1 / math.sqrt(2)
    qs = list(range(n))
    return {
        "apply_1q (h on every qubit)": lambda K, v: [K.apply_1q(v, q, s, s, s, -s) for q in qs],
        "apply_cx (ladder)": lambda K, v: [K.apply_cx(v, q, q + 1) for q in qs[:-1]],
        "prob_one (every qubit)": lambda K, v: [K.prob_one(v, q) for q in qs],
        "uniforms (4096 x 8)": lambda K, v: K.uniforms(np.uint64(12345), 4096, 8),
        "sample_terminal (1024 shots)": lambda K, v: K.sample_terminal(
            (v.real**2 + v.imag**2), np.arange(min(n, 6), dtype=np.int64),
            NUMPY_KERNELS.uniforms(np.uint64(7), 1024, min(n, 6))),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--qubits", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if NUMBA_KERNELS is None:
        raise SystemExit("numba is not installed")
    base = random_state(args.qubits)
    print(f"{args.qubits} qubits, best of {args.repeat}")
    print(f"{'kernel':<32} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, fn in cases(args.qubits).items():
        fn(NUMBA_KERNELS, base.copy())  # compile
        v1, v2 = base.copy(), base.copy()
        t_np = best_of(lambda: fn(NUMPY_KERNELS, v1), args.repeat)
        t_nb = best_of(lambda: fn(NUMBA_KERNELS, v2), args.repeat)
        print(f"{name:<32} {t_np * 1e3:>10.3f} {t_nb * 1e3:>10.3f} {t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()

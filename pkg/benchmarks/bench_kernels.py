"""Compiled (numba) vs pure-numpy kernel loops.

    python benchmarks/bench_kernels.py [--repeat 20] [--epochs 20]

Per-kernel timings call both paths in one process. The training timing runs
short pendulum experiments in subprocesses with and without
RSA2C_DISABLE_NUMBA=1, so the environment flag is exercised end to end.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from rsa2c import _accel

CASES = [
    # (name, rows, dictionary size, state dim)
    ("policy mean, one state", 1, 384, 3),
    ("rollout batch", 200, 384, 3),
    ("eval lockstep", 5, 384, 3),
    ("gram", 384, 384, 3),
    ("lqr gap batch", 64, 384, 4),
]

_TRAIN = ("import time; from rsa2c.config import RunConfig; from rsa2c.trainer import run_experiment; "
          "cfg = RunConfig().with_overrides({{'epochs': {epochs}, 'seed': 0}}); "
          "t = time.perf_counter(); run_experiment(cfg); print(time.perf_counter() - t)")


def best_of(fn, repeat: int) -> float:
    fn()  # warm-up, includes compilation on the first call
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench_kernels(repeat: int) -> list[tuple[str, str, float, float]]:
    rng = np.random.default_rng(0)
    rows = []
    for name, n, q, d in CASES:
        S, C = rng.normal(size=(n, d)), rng.normal(size=(q, d))
        coeffs, w = rng.normal(size=(q, 1)), np.full(d, 1.25)
        for kname, call in (
            ("expansion", lambda c: _accel.expansion(S, C, coeffs, w, compiled=c)),
            ("cross_kernel", lambda c: _accel.cross_kernel(S, C, w, compiled=c)),
            ("dimwise_kernel", lambda c: _accel.dimwise_kernel(S, C[:64], 0.9, compiled=c)),
        ):
            if not np.allclose(call(True), call(False), rtol=1e-12, atol=1e-14):
                raise AssertionError(f"{kname} paths disagree on {name}")
            rows.append((name, kname, best_of(lambda: call(True), repeat), best_of(lambda: call(False), repeat)))
    return rows


def bench_training(epochs: int) -> tuple[float, float]:
    out = []
    for disable in ("0", "1"):
        env = dict(os.environ, RSA2C_DISABLE_NUMBA=disable)
        res = subprocess.run([sys.executable, "-c", _TRAIN.format(epochs=epochs)], env=env,
                             capture_output=True, text=True, check=True)
        out.append(float(res.stdout.strip().splitlines()[-1]))
    return out[0], out[1]


def main(argv=None) -> int:
    p = argparse.ArgumentParser()
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--epochs", type=int, default=20, help="pendulum epochs for the end-to-end timing (0 skips)")
    args = p.parse_args(argv)
    if _accel.numba is None:
        print("numba is not installed; only the numpy path is available")
        return 1
    print(f"{'case':<24}{'kernel':<16}{'numba us':>10}{'numpy us':>10}{'speedup':>9}")
    for name, kname, tn, tp in bench_kernels(args.repeat):
        print(f"{name:<24}{kname:<16}{tn * 1e6:>10.1f}{tp * 1e6:>10.1f}{tp / tn:>9.2f}")
    if args.epochs > 0:
        tn, tp = bench_training(args.epochs)
        print(f"\ntraining, {args.epochs} pendulum epochs: numba {tn:.2f}s, numpy {tp:.2f}s, speedup {tp / tn:.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())

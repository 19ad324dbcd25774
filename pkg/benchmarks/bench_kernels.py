"""Time the denoising-loss kernel on each backend, then a short training run.

    python3 benchmarks/bench_kernels.py [--repeat 50]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from rcdiff import kernels
from rcdiff.datasets import make_unlabeled, pseudo_label
from rcdiff.oracle import schedule
from rcdiff.score import TrainOptions, train
from rcdiff.world import make_world, random_orthonormal

SHAPES = [(16, 4, 512), (64, 16, 512), (64, 16, 2048)]


def _inputs(D, d, n, rng):
    X = rng.standard_normal((n, D))
    Y = rng.standard_normal(n)
    T = rng.uniform(0.01, 10.0, n)
    E = rng.standard_normal((n, D))
    V = random_orthonormal(D, d, rng)
    B = rng.standard_normal((d, d))
    P = B @ B.T / d + np.eye(d)
    return X, Y, T, E, V, P, rng.standard_normal(d), 4.0


def best_of(fn, repeat: int) -> float:
    fn()
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None) -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--train-iters", type=int, default=500)
    args = ap.parse_args(argv)
    names = list(kernels.BACKENDS)
    print(f"backends: {', '.join(names)} (default {kernels.DEFAULT})")
    print(f"{'D':>4} {'d':>4} {'rows':>6} " + " ".join(f"{n:>12}" for n in names) + "   speedup")
    rng = np.random.default_rng(0)
    for D, d, n in SHAPES:
        args_ = _inputs(D, d, n, rng)
        ms = {k: 1e3 * best_of(lambda f=kernels.get(k): f(*args_), args.repeat) for k in names}
        ref = kernels.get("python")(*args_)
        for k in names:
            got = kernels.get(k)(*args_)
            assert abs(got[0] - ref[0]) <= 1e-10 * abs(ref[0]), k
        speed = ms["python"] / ms["cython"] if "cython" in ms else float("nan")
        print(f"{D:>4} {d:>4} {n:>6} " + " ".join(f"{ms[k]:>9.3f} ms" for k in names) + f"   {speed:6.2f}x")

    world = make_world(64, 16, seed=0)
    data = pseudo_label(make_unlabeled(world, 8192, 1), lambda x: x @ world.theta, 0.125, 2)
    sched = schedule(10.0, 1.0, 5e-3)
    print(f"\ntraining, D=64 d=16, {args.train_iters} iterations of 512 rows")
    for k in names:
        t = time.perf_counter()
        train(data, sched, TrainOptions(iters=args.train_iters, backend=k), d=16)
        print(f"  {k:>8}: {time.perf_counter() - t:.2f} s")


if __name__ == "__main__":
    main()

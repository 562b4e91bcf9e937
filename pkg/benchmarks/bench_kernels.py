#!/usr/bin/env python3
"""Time the numba and numpy versions of the loss kernels side by side.

Both versions are imported directly, so the SVSOFTMAX_DISABLE_NUMBA flag
does not matter here. Outputs are compared before timing.

    python3 benchmarks/bench_kernels.py --batch 64 256 1024 --classes 16 1000
"""

import argparse
import timeit

import numpy as np

from svsoftmax import _kernels as K
from svsoftmax._accel import HAVE_NUMBA


def make_case(rng, n, k):
    cos = np.clip(rng.uniform(-1.0, 1.0, size=(n, k)), -1.0, 1.0)
    labels = rng.integers(0, k, size=n)
    return cos, labels


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def bench(n, k, repeat, seed):
    rng = np.random.default_rng(seed)
    cos, labels = make_case(rng, n, k)
    args = (cos, labels, 30.0, 1.2, 1.0, 0.35, 0.0, K.MASK_MARGIN, False, K._NO_FROZEN)
    out_nb = K.forward_nb(*args)
    out_np = K.forward_np(*args)
    for a, b in zip(out_nb, out_np):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)
    _, prob, _, mask, _, dfy = out_np
    coef = np.full(n, 1.0 / n)
    bargs = (prob, mask, labels, 30.0, 1.2, dfy, coef)
    np.testing.assert_allclose(K.backward_nb(*bargs), K.backward_np(*bargs), rtol=1e-12, atol=1e-15)

    number = max(1, 20000 // (n * k) + 1)
    rows = []
    for name, nb, npy, a in (("forward", K.forward_nb, K.forward_np, args),
                             ("backward", K.backward_nb, K.backward_np, bargs)):
        t_nb = best_of(lambda: nb(*a), repeat, number)
        t_np = best_of(lambda: npy(*a), repeat, number)
        rows.append((name, n, k, t_nb, t_np))
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, nargs="+", default=[64, 256, 1024])
    ap.add_argument("--classes", type=int, nargs="+", default=[16, 1000])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    print(f"{'kernel':8s} {'N':>6s} {'K':>6s} {'numba us':>10s} {'numpy us':>10s} {'speedup':>8s}")
    for n in args.batch:
        for k in args.classes:
            for name, n_, k_, t_nb, t_np in bench(n, k, args.repeat, args.seed):
                print(f"{name:8s} {n_:6d} {k_:6d} {t_nb * 1e6:10.1f} {t_np * 1e6:10.1f} {t_np / t_nb:8.2f}")


if __name__ == "__main__":
    main()

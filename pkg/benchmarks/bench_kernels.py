"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Compilation is triggered once before timing. Outputs are compared so a
speedup is never reported for a kernel that disagrees.
"""

import argparse
import time

import numpy as np

from amdiff import _kernels as k


def best_of(fn, args, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - start)
    return min(times), out


def cases(rng):
    probs = rng.dirichlet(np.ones(40), size=200_000)
    u = rng.random(probs.shape[0])
    yield "categorical_sample", (probs, u), k.categorical_sample_np, k.categorical_sample_nb

    K, L, N, B = 12, 3, 2000, 512
    data = rng.integers(3, K, size=(N, L))
    weights = rng.dirichlet(np.ones(N))
    xt = np.where(rng.random((B, L)) < 0.5, 1, rng.integers(3, K, size=(B, L)))
    yield "oracle_marginals", (data, weights, xt, 1, K), k.oracle_marginals_np, k.oracle_marginals_nb


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    if not k.HAVE_NUMBA:
        print("numba unavailable or disabled; nothing to compare")
        return
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<20} {'numpy s':>10} {'numba s':>10} {'speedup':>8}")
    for name, inputs, slow, fast in cases(rng):
        fast(*inputs)  # compile
        t_np, out_np = best_of(slow, inputs, args.repeat)
        t_nb, out_nb = best_of(fast, inputs, args.repeat)
        if isinstance(out_np, tuple):
            same = all(np.allclose(a, b, rtol=1e-12, atol=1e-15) for a, b in zip(out_np, out_nb))
        else:
            same = np.array_equal(out_np, out_nb)
        if not same:
            raise SystemExit(f"{name}: backends disagree")
        print(f"{name:<20} {t_np:>10.4f} {t_nb:>10.4f} {t_np / t_nb:>7.1f}x")


if __name__ == "__main__":
    main()

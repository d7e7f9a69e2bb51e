"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel and size with the best-of-N wall time for each
backend and the speed-up.  Both backends are checked to agree first.
"""

import argparse
import sys
import timeit

import numpy as np

from otcycle import _fallback

try:
    from otcycle import _kernels
except ImportError:
    _kernels = None


def cases(rng):
    for n in (50, 200, 500, 1000):
        X, Y = rng.standard_normal((n, 2)), rng.standard_normal((n, 2))
        C = ((X[:, None] - Y[None]) ** 2).sum(-1)
        yield f"lap_solve n={n}", "lap_solve", (C,)
    for n in (500, 2000, 4000):
        P, Q = rng.standard_normal((n, 3)), rng.standard_normal((n, 3))
        yield f"pairwise_distance_sum n={n}", "pairwise_distance_sum", (P, Q)


def best(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    print(f"{'case':32s} {'compiled s':>12s} {'python s':>12s} {'speed-up':>9s}")
    for label, name, inputs in cases(rng):
        fast, slow = getattr(_kernels, name), getattr(_fallback, name)
        a, b = fast(*inputs), slow(*inputs)
        if not np.array_equal(np.asarray(a), np.asarray(b)) and not np.isclose(a, b, rtol=1e-12):
            raise SystemExit(f"{label}: backends disagree")
        t_fast, t_slow = best(fast, inputs, args.repeat), best(slow, inputs, args.repeat)
        print(f"{label:32s} {t_fast:12.5f} {t_slow:12.5f} {t_slow / t_fast:8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--sizes 128 512 2048]

Also checks that both backends return identical results on every input.
"""
import argparse
import sys
import timeit

import numpy as np

from softshape.kernels import available_backends, farthest_point_indices, nearest_sqdist


def best_of(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--sizes", type=int, nargs="+", default=[128, 512, 2048])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = available_backends()
    if "compiled" not in backends:
        print("compiled kernels not built; only the fallback will be timed", file=sys.stderr)
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<16}{'n':>7}" + "".join(f"{b + ' (ms)':>16}" for b in backends) + f"{'speed-up':>11}")
    for n in args.sizes:
        a, b = rng.uniform(size=(n, 3)), rng.uniform(size=(n, 3))
        cloud = rng.uniform(size=(4 * n, 3))
        cases = {
            "nearest_sqdist": lambda be: nearest_sqdist(a, b, backend=be),
            "farthest_point": lambda be: farthest_point_indices(cloud, n, 0, backend=be),
        }
        for name, fn in cases.items():
            outs = [fn(be) for be in backends]
            for other in outs[1:]:
                same = all(np.array_equal(x, y) for x, y in zip(outs[0], other)) if isinstance(other, tuple) \
                    else np.array_equal(outs[0], other)
                if not same:
                    raise SystemExit(f"{name}: backends disagree at n={n}")
            times = [best_of(lambda be=be: fn(be), args.repeat) * 1e3 for be in backends]
            ratio = f"{times[0] / times[-1]:.1f}x" if len(times) > 1 else "-"
            print(f"{name:<16}{n:>7}" + "".join(f"{t:>16.2f}" for t in times) + f"{ratio:>11}")


if __name__ == "__main__":
    main()

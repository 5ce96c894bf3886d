"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from nuclab.kernels import backends


def cases(rng):
    r = rng.uniform(0.0, 5.0, 1_000_000)
    nodes, weights = np.polynomial.legendre.leggauss(16)
    nodes, weights = 0.5 * (nodes + 1.0), 0.5 * weights
    z = rng.uniform(0.0, 6.0, (50_000, 2))
    w2 = rng.standard_normal((257, 257))
    om2 = [np.ones((256, 257)), np.ones((257, 256))]
    w3 = rng.standard_normal((65, 65, 65))
    om3 = [np.ones((64, 65, 65)), np.ones((65, 64, 65)), np.ones((65, 65, 64))]
    return {
        "smoothstep_cutoff (1e6 points)": lambda m: m.smoothstep_cutoff(r, 1.0, 2.0),
        "lens_tail_inner (5e4 sections, d=3)": lambda m: m.lens_tail_inner(z, 3.0, 8.0, 0.6, 0.8, nodes, weights),
        "laplace_apply 257^2": lambda m: m.laplace_apply(w2, om2),
        "laplace_apply 65^3": lambda m: m.laplace_apply(w3, om3),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    mods = backends()
    rng = np.random.default_rng(0)
    print(f"{'kernel':40s}" + "".join(f"{name:>12s}" for name in mods) + ("   speedup" if len(mods) > 1 else ""))
    for label, fn in cases(rng).items():
        times = {}
        for name, mod in mods.items():
            fn(mod)
            times[name] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat))
        line = f"{label:40s}" + "".join(f"{1e3 * t:10.2f}ms" for t in times.values())
        if "cython" in times:
            line += f"   {times['python'] / times['cython']:6.2f}x"
        print(line)


if __name__ == "__main__":
    main()

"""Compare the compiled kernels with the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--json out.json]
"""

import argparse
import json
import sys
import timeit

import numpy as np

from ctcilm import _kernels_py

try:
    from ctcilm import _kernels as compiled
except ImportError:
    compiled = None


def workloads(rng):
    lp = np.log(rng.dirichlet(np.ones(4), size=12))
    seq = np.array([0, 2, 1, 1, 0, 2], dtype=np.int64)
    z = rng.normal(size=(64, 5))
    mass = rng.random(64)
    target = rng.dirichlet(np.ones(5), size=64) * mass[:, None]
    return {
        "ctc_forward T=12 S=6": lambda k: k.ctc_forward(lp, seq),
        "prefix_scores T=12 S=6": lambda k: k.prefix_scores(lp, seq),
        "posterior_rows T=12 S=6": lambda k: k.posterior_rows(lp, seq),
        "softmax_descent 64x5, 200 steps": lambda k: k.softmax_descent(z.copy(), mass, target, 0.5, 200),
    }


def bench(fn, backend, repeat):
    number = 20
    best = min(timeit.repeat(lambda: fn(backend), number=number, repeat=repeat))
    return best / number * 1e6


def main(argv=None):
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", default=None)
    args = parser.parse_args(argv)
    if compiled is None:
        print("compiled extension not built; only the fallback is timed", file=sys.stderr)
    rows = []
    for name, fn in workloads(np.random.default_rng(0)).items():
        py = bench(fn, _kernels_py, args.repeat)
        cy = bench(fn, compiled, args.repeat) if compiled is not None else None
        rows.append({"kernel": name, "python_us": py, "cython_us": cy, "speedup": py / cy if cy else None})
    print(f"{'kernel':34s} {'python us':>11s} {'cython us':>11s} {'speedup':>8s}")
    for r in rows:
        cy = f"{r['cython_us']:11.1f}" if r["cython_us"] is not None else f"{'-':>11s}"
        sp = f"{r['speedup']:7.1f}x" if r["speedup"] is not None else f"{'-':>8s}"
        print(f"{r['kernel']:34s} {r['python_us']:11.1f} {cy} {sp}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()

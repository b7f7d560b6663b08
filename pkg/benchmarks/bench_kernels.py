"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--seed 0]

Prints one line per kernel and workload with the best-of-``repeat`` time of
each backend and the speedup.  Both backends are checked to agree first.
"""
import argparse
import sys
import timeit

import numpy as np

from curriloc import _pykernels

try:
    from curriloc import _ckernels
except ImportError:
    _ckernels = None


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def workloads(rng):
    """(label, kernel name, args) triples sized like the desk-scale run and a larger map."""
    out = []
    for n in (200, 5000):
        m = unit_rows(rng, n, 64)
        queries = unit_rows(rng, 100, 64)
        cand = np.sort(rng.choice(n, n // 8, replace=False))
        out.append((f"nearest n={n} all rows", "nearest_many", (queries, m, None)))
        out.append((f"nearest n={n} 1/8 rows", "nearest_many", (queries, m, cand)))
    for shape, k in (((32, 128), 7), ((32, 128), 31), ((128, 512), 15)):
        img = rng.integers(0, 256, shape).astype(np.uint8)
        out.append((f"blur {shape[0]}x{shape[1]} k={k}", "circular_box_blur", (img, k)))
    return out


def call(module, kernel, args):
    if kernel == "nearest_many":
        queries, m, cand = args
        return [module.nearest_index(q, m, cand, "euclidean")[0] for q in queries]
    return module.circular_box_blur(*args)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if _ckernels is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation` first")
        return 1

    rng = np.random.default_rng(args.seed)
    print(f"{'workload':32s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for label, kernel, wl in workloads(rng):
        fast, slow = call(_ckernels, kernel, wl), call(_pykernels, kernel, wl)
        if not np.array_equal(np.asarray(fast), np.asarray(slow)):
            print(f"{label}: backends disagree", file=sys.stderr)
            return 1
        times = {}
        for name, module in (("python", _pykernels), ("cython", _ckernels)):
            timer = timeit.Timer(lambda: call(module, kernel, wl))
            number, _ = timer.autorange()
            times[name] = min(timer.repeat(args.repeat, number)) / number * 1e3
        print(f"{label:32s} {times['python']:10.3f} {times['cython']:10.3f} "
              f"{times['python'] / times['cython']:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())

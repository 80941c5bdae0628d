"""Time the compiled kernels against their pure-numpy twins.

Run:  python3 benchmarks/bench_kernels.py [--repeats 5]

Each kernel is warmed once per backend (the first compiled call pays the
JIT cost), then the best of N wall-clock timings is reported, all on the
same C-contiguous float64 inputs. Output parity is asserted on every pair
so a speedup never hides a divergence.
"""

import argparse
import time

import numpy as np

from edig._kernels import IMPLEMENTATIONS, NUMBA_AVAILABLE


def best_of(fn, args, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out


def flatten(result):
    if isinstance(result, tuple):
        return np.concatenate([np.asarray(p, dtype=np.float64).ravel()
                               for p in result])
    return np.asarray(result, dtype=np.float64).ravel()


def run_case(name, args, repeats):
    rows = {}
    outputs = {}
    for impl_name, impl in sorted(IMPLEMENTATIONS.items()):
        fn = impl[name]
        fn(*args)  # warmup; triggers compilation on the jit path
        rows[impl_name], outputs[impl_name] = best_of(fn, args, repeats)
    if len(outputs) == 2:
        a, b = (flatten(outputs[k]) for k in sorted(outputs))
        assert np.array_equal(a, b) or np.allclose(a, b, atol=1e-10), \
            f"{name}: backends disagree"
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="timings per kernel; best is reported")
    parser.add_argument("--n", type=int, default=800,
                        help="instance count for the distance/cluster cases")
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    n, d = args.n, 24
    X = np.ascontiguousarray(rng.normal(0, 1, (n, d)))
    B = np.ascontiguousarray(rng.normal(0, 1, (n // 2, d)))
    y = np.ascontiguousarray((rng.random(n) < 0.4).astype(np.int64))
    Xq = np.ascontiguousarray(rng.normal(0, 1, (n, d)))

    from edig import _kernels
    D = _kernels.pairwise_cosine(X)
    d_sub = max(1, int(np.sqrt(d)))
    forest_args = (X, y, 2, 50, 12, 2, d_sub, True, 7)
    forest = IMPLEMENTATIONS[sorted(IMPLEMENTATIONS)[0]]["fit_forest"](*forest_args)
    predict_args = (forest[0], forest[1], forest[2], forest[3], forest[4], Xq)

    cases = [
        ("pairwise_cosine", (X,)),
        ("cross_cosine", (X, B)),
        ("average_linkage", (D, 5)),
        ("fit_forest", forest_args),
        ("forest_predict", predict_args),
    ]

    backends = sorted(IMPLEMENTATIONS)
    if not NUMBA_AVAILABLE:
        print("note: numba unavailable, timing the numpy path only")
    header = f"{'kernel':<18}" + "".join(f"{b:>12}" for b in backends)
    if len(backends) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for name, case_args in cases:
        rows = run_case(name, case_args, args.repeats)
        line = f"{name:<18}"
        for b in backends:
            line += f"{rows[b] * 1e3:>10.2f}ms"
        if len(backends) == 2:
            line += f"{rows['numpy'] / rows['numba']:>9.1f}x"
        print(line)


if __name__ == "__main__":
    main()

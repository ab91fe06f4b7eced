"""Time the compiled vote-simulation kernel against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--trials N] [--repeat R]

Both backends must return identical win counts; the script exits 1 if they do not.
"""

import argparse
import json
import sys
import time

from lmv_rpa import _kernels_py

try:
    from lmv_rpa import _kernels
except ImportError:
    _kernels = None

# (label, n, q, V, quorum, absent_p, tie_model)
CASES = [
    ("ensemble-8", 8, 0.94, 1000, 5, 0.0, 2),
    ("small-V", 5, 0.6, 3, 3, 0.1, 2),
    ("wide-16", 16, 0.8, 20, 9, 0.05, 0),
]


def best_of(fn, repeat):
    times = []
    result = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return min(times), result


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=1_000_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", action="store_true", help="print one JSON object per case")
    args = ap.parse_args(argv)

    if _kernels is None:
        print("compiled kernel not built; only the numpy fallback is available", file=sys.stderr)
    mismatch = False
    for label, n, q, V, quorum, absent, tie in CASES:
        call = (n, q, V, quorum, absent, tie, args.trials, 42)
        py_s, py_wins = best_of(lambda: _kernels_py.simulate_plurality(*call), args.repeat)
        row = {"case": label, "trials": args.trials, "numpy_s": round(py_s, 4), "wins": py_wins}
        if _kernels is not None:
            cy_s, cy_wins = best_of(lambda: _kernels.simulate_plurality(*call), args.repeat)
            row.update(cython_s=round(cy_s, 4), speedup=round(py_s / cy_s, 2), identical=cy_wins == py_wins)
            mismatch |= cy_wins != py_wins
        if args.json:
            print(json.dumps(row))
        else:
            extra = f"  cython {row['cython_s']:.3f}s  x{row['speedup']}  identical={row['identical']}" if _kernels else ""
            print(f"{label:<11} numpy {py_s:.3f}s{extra}")
    return 1 if mismatch else 0


if __name__ == "__main__":
    sys.exit(main())

"""Compare the numba and numpy kernel backends on full contractions.

    python3 benchmarks/bench_kernels.py [--n 2000] [--repeat 3]

Each backend contracts the same synthetic network; the first numba call
compiles (or loads the on-disk cache) and is excluded from the timings.
"""

import argparse
import time

import numpy as np

from rcmc import _kernels, build_canonical, run, synthesize


def timed(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--density", type=float, default=None, help="default keeps nnz near 5n")
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    density = args.density or min(1.0, 4.0 / (args.n - 1))
    rm = build_canonical(synthesize(args.n, density, 400, 100, seed=args.seed))
    p = np.eye(rm.n)[0]
    print(f"n = {rm.n}, nnz = {rm.K.nnz}")

    cases = [("A", "diag"), ("A", "gershgorin"), ("B", "gershgorin")]
    backends = [b for b in (_kernels.NUMBA, _kernels.NUMPY) if b is not None]
    warm = build_canonical(synthesize(40, 0.2, 100, 50, seed=1))
    results = {}
    for be in backends:
        _kernels.K = be
        for variant, method in cases:
            run(warm, np.eye(warm.n)[0], variant, method)
            t, traj = timed(lambda: run(rm, p, variant, method), args.repeat)
            results[be.name, variant, method] = (t, traj)

    print(f"{'case':<16}" + "".join(f"{b.name:>10}" for b in backends) + "   speedup  max |dq|")
    for variant, method in cases:
        ts = [results[b.name, variant, method][0] for b in backends]
        line = f"{variant + ' ' + method:<16}" + "".join(f"{t:9.2f}s" for t in ts)
        if len(backends) == 2:
            qa = results["numba", variant, method][1].entries
            qb = results["numpy", variant, method][1].entries
            dq = max(np.abs(a.q - b.q).max() for a, b in zip(qa, qb))
            line += f"   {ts[1] / ts[0]:6.1f}x  {dq:.1e}"
        print(line)


if __name__ == "__main__":
    main()

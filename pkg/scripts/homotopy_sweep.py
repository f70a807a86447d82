"""Continuation in eps on the well problem; prints the stage table.

    python3 scripts/homotopy_sweep.py --cells 64 --schedule 1e-1 1e-2 1e-3 1e-4
"""

import argparse
import math
import time

from mfgcert import grid as G
from mfgcert.certificates import certify
from mfgcert.problems import deep_well_problem, well_problem
from mfgcert.solver import homotopy_solve


def l2(grid, a, b):
    d = a - b
    return math.sqrt(G.inner_cells(grid, d, d))


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--cells", type=int, default=64)
    parser.add_argument("--schedule", type=float, nargs="+", default=[1e-1, 1e-2, 1e-3, 1e-4])
    parser.add_argument("--deep", action="store_true", help="use the deep well (depth 30, rho 0.05)")
    args = parser.parse_args()

    make = deep_well_problem if args.deep else well_problem
    spec = make((args.cells, args.cells), eps=args.schedule[0])
    t0 = time.perf_counter()

    previous = []

    def report(k, stage, sol):
        cert = certify(sol, stage)
        dist = f"  dm_l2={l2(stage.grid, sol.m, previous[-1]):.3e}" if previous else ""
        previous.append(sol.m)
        print(f"stage {k}  eps={stage.congestion.eps:.0e}  iterations={sol.iterations:5d}  "
              f"gap_rel={cert.gap_rel:.2e}  verdict={'pass' if cert.passed else 'fail'}  "
              f"t={time.perf_counter() - t0:.1f}s{dist}")

    result = homotopy_solve(spec, args.schedule, on_stage=report)
    print("successive L2 distances: " + ", ".join(f"{d:.3e}" for d in result.distances))
    decreasing = all(a > b for a, b in zip(result.distances, result.distances[1:]))
    print(f"strictly decreasing: {decreasing}")


if __name__ == "__main__":
    main()

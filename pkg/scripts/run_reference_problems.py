"""Solve the three reference problems on [0,2]^2 and print their certificates.

    python3 scripts/run_reference_problems.py --cells 64 --out runs/reference
"""

import argparse
import time
from pathlib import Path

from threadpoolctl import threadpool_limits

from mfgcert.certificates import certify
from mfgcert.cli import RunConfig, write_run
from mfgcert.problems import deep_well_problem, uniform_problem, well_problem
from mfgcert.solver import solve

PROBLEMS = {
    "uniform": (uniform_problem, {"potential": "constant", "rho": 1.0}),
    "well": (well_problem, {"potential": "cosine_well", "rho": 0.1, "potential_params": {"depth": 5.0}}),
    "deep_well": (deep_well_problem, {"potential": "cosine_well", "rho": 0.05,
                                      "potential_params": {"depth": 30.0}}),
}


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--cells", type=int, default=64)
    parser.add_argument("--eps", type=float, default=1e-3)
    parser.add_argument("--out", type=Path, default=None, help="write one run directory per problem")
    parser.add_argument("--only", choices=sorted(PROBLEMS), action="append")
    args = parser.parse_args()

    for name in args.only or PROBLEMS:
        make, fields = PROBLEMS[name]
        spec = make((args.cells, args.cells), eps=args.eps)
        with threadpool_limits(limits=1):
            t0 = time.perf_counter()
            sol = solve(spec)
            seconds = time.perf_counter() - t0
        cert = certify(sol, spec)
        print(f"{name:10s} iterations={sol.iterations:5d} seconds={seconds:7.2f} lambda={cert.lam:+.6f} "
              f"gap_rel={cert.gap_rel:.2e} max_m={sol.m.max():.6f} pressure={cert.pressure_mass:.4f} "
              f"verdict={'pass' if cert.passed else 'fail'}")
        if args.out is not None:
            run = RunConfig(extents=(2.0, 2.0), cells=(args.cells, args.cells), q=2.0, r=3.0,
                            eps=args.eps, **fields)
            write_run(args.out / name, run, spec, sol, cert, "converged")


if __name__ == "__main__":
    main()

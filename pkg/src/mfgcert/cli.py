"""Command line front end: ``mfgcert {solve,certify,sweep,selftest}``.

Run configuration is INI text.  Sections and keys::

    [domain]            extents, cells
    [congestion]        q, r, eps | eps_schedule
    [coupling]          potential | V_file, rho, theta
    [coupling.potential] parameters of the catalog potential
    [solver]            any SolverConfig field
    [output]            dir

A run directory holds one ``.f64`` file (plus ``.hdr``) per field, the
echoed configuration, ``convergence.csv``, ``certificate.txt`` and
``manifest.txt``.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import hashlib
import logging
import os
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from mfgcert import __version__
from mfgcert import grid as G
from mfgcert.certificates import Certificate, certify, extract_multipliers
from mfgcert.coupling import Coupling, potential_from_catalog
from mfgcert.errors import ConfigError, MaxIterExceeded, SpecError
from mfgcert.grid import Grid
from mfgcert.perspective import CongestionParams
from mfgcert.solver import ProblemSpec, Solution, SolverConfig, homotopy_solve, solve

log = logging.getLogger("mfgcert")


class RunDirError(OSError):
    """A run directory is incomplete or a field file cannot be decoded."""


EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_MAXITER, EXIT_IO = 0, 1, 2, 3, 4
ROUNDTRIP_TOL = 1e-12

_SOLVER_FIELDS = {f.name: f.type for f in dataclasses.fields(SolverConfig)}
_SECTIONS = {
    "domain": {"extents", "cells"},
    "congestion": {"q", "r", "eps", "eps_schedule"},
    "coupling": {"potential", "v_file", "rho", "theta"},
    "coupling.potential": None,  # free-form catalog parameters
    "solver": set(_SOLVER_FIELDS),
    "output": {"dir"},
}


@dataclass
class RunConfig:
    extents: tuple
    cells: tuple
    q: float
    r: float | None = None
    eps: float = 0.0
    eps_schedule: tuple | None = None
    potential: str | None = "constant"
    potential_params: dict = field(default_factory=dict)
    V_file: Path | None = None
    rho: float = 0.0
    theta: float = 1.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: Path | None = None

    def grid(self) -> Grid:
        return Grid(self.extents, self.cells)

    def problem(self, V=None) -> ProblemSpec:
        grid = self.grid()
        if V is None:
            if self.V_file is not None:
                V, _, vgrid = G.read_field(self.V_file)
                if vgrid != grid:
                    raise ConfigError(f"V_file grid {vgrid.cells} does not match {grid.cells}")
            else:
                V = potential_from_catalog(grid, self.potential, **self.potential_params)
        eps = self.eps_schedule[0] if self.eps_schedule else self.eps
        congestion = CongestionParams(self.q, self.r, eps)
        return ProblemSpec(grid, congestion, Coupling(V, self.rho, self.theta))

    def stage(self, eps: float) -> "RunConfig":
        return dataclasses.replace(self, eps=eps, eps_schedule=None)

    def echo(self) -> str:
        """Canonical INI text; the output directory is left out on purpose."""
        lines = ["[domain]",
                 "extents = " + ", ".join(repr(e) for e in self.extents),
                 "cells = " + ", ".join(str(c) for c in self.cells),
                 "", "[congestion]", f"q = {self.q!r}"]
        if self.r is not None:
            lines.append(f"r = {self.r!r}")
        if self.eps_schedule:
            lines.append("eps_schedule = " + ", ".join(repr(e) for e in self.eps_schedule))
        else:
            lines.append(f"eps = {self.eps!r}")
        lines += ["", "[coupling]"]
        if self.V_file is not None:
            lines.append(f"V_file = {self.V_file}")
        else:
            lines.append(f"potential = {self.potential}")
        lines += [f"rho = {self.rho!r}", f"theta = {self.theta!r}"]
        if self.potential_params and self.V_file is None:
            lines += ["", "[coupling.potential]"]
            for key in sorted(self.potential_params):
                value = self.potential_params[key]
                text = (", ".join(repr(v) for v in value) if isinstance(value, (list, tuple))
                        else repr(value))
                lines.append(f"{key} = {text}")
        lines += ["", "[solver]"]
        for key, value in dataclasses.asdict(self.solver).items():
            lines.append(f"{key} = {value!r}")
        return "\n".join(lines) + "\n"


def _floats(text: str) -> tuple:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _param(text: str):
    values = _floats(text)
    return values[0] if len(values) == 1 else list(values)


def parse_config(text: str, base: Path | None = None) -> RunConfig:
    """Parse and validate INI text; raises :class:`ConfigError`."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        allowed = _SECTIONS[section]
        if allowed is not None:
            unknown = set(parser[section]) - allowed
            if unknown:
                raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    for required in ("domain", "congestion"):
        if required not in parser:
            raise ConfigError(f"missing section [{required}]")
    try:
        dom, con = parser["domain"], parser["congestion"]
        cou = parser["coupling"] if "coupling" in parser else {}
        if "extents" not in dom or "cells" not in dom:
            raise ConfigError("[domain] needs extents and cells")
        if "eps" in con and "eps_schedule" in con:
            raise ConfigError("give either eps or eps_schedule, not both")
        if "potential" in cou and "v_file" in cou:
            raise ConfigError("give either potential or V_file, not both")
        solver = {}
        if "solver" in parser:
            for key, value in parser["solver"].items():
                kind = _SOLVER_FIELDS[key]
                solver[key] = int(value) if kind in ("int", int) else float(value)
        pot_params = ({k: _param(v) for k, v in parser["coupling.potential"].items()}
                      if "coupling.potential" in parser else {})
        v_file = None
        if "v_file" in cou:
            v_file = Path(cou["v_file"])
            if base is not None and not v_file.is_absolute():
                v_file = base / v_file
        run = RunConfig(
            extents=_floats(dom["extents"]),
            cells=tuple(int(c) for c in dom["cells"].replace(",", " ").split()),
            q=float(con["q"]) if "q" in con else _missing("congestion", "q"),
            r=float(con["r"]) if "r" in con else None,
            eps=float(con.get("eps", 0.0)),
            eps_schedule=_floats(con["eps_schedule"]) if "eps_schedule" in con else None,
            potential=None if v_file else cou.get("potential", "constant"),
            potential_params=pot_params,
            V_file=v_file,
            rho=float(cou.get("rho", 0.0)),
            theta=float(cou.get("theta", 1.0)),
            solver=SolverConfig(**solver),
            output=Path(parser["output"]["dir"]) if "output" in parser else None,
        )
    except ValueError as exc:
        if isinstance(exc, SpecError):
            raise
        raise ConfigError(f"bad value: {exc}") from None
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if run.output is not None and base is not None and not run.output.is_absolute():
        run.output = base / run.output
    # validates domain, exponent regime and coupling
    try:
        run.problem()
    except ConfigError:
        raise
    except SpecError as exc:
        raise ConfigError(str(exc)) from None
    except TypeError as exc:
        raise ConfigError(f"bad potential parameters: {exc}") from None
    return run


def _missing(section, key):
    raise ConfigError(f"[{section}] needs {key}")


def load_config(path) -> RunConfig:
    path = Path(path)
    return parse_config(path.read_text(), base=path.parent)


# run directories

def _fmt(x) -> str:
    return f"{x:.17g}"


def write_run(out: Path, run: RunConfig, spec: ProblemSpec, sol: Solution,
              cert: Certificate, status: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    grid = spec.grid
    mult = extract_multipliers(sol, spec, cert.lam)
    fields = {"m": (sol.m, "cell"), "u": (mult.u, "cell"), "p": (mult.p, "cell"),
              "mu": (mult.mu, "cell"), "V": (spec.coupling.V, "cell")}
    for k in range(grid.dim):
        fields[f"w_{k}"] = (sol.w[k], f"face{k}")
        fields[f"momentum_{k}"] = (sol.momentum[k], "cell")
    digests = []
    for name in sorted(fields):
        values, kind = fields[name]
        G.write_field(out / f"{name}.f64", values, grid, kind)
        raw = (out / f"{name}.f64").read_bytes()
        digests.append(f"field.{name}={hashlib.sha256(raw).hexdigest()}")
    (out / "config.ini").write_text(run.echo())
    rows = ["iter,primal_res,dual_res,gap,objective,mass_error"]
    for row in sol.history:
        rows.append(",".join([str(row["iter"])] + [_fmt(row[k]) for k in
                    ("primal_res", "dual_res", "gap", "objective", "mass_error")]))
    (out / "convergence.csv").write_text("\n".join(rows) + "\n")
    (out / "certificate.txt").write_text(cert.to_text())
    manifest = [
        f"mfgcert={__version__}",
        f"python={platform.python_version()}",
        f"numpy={np.__version__}",
        f"scipy={scipy.__version__}",
        f"seed={run.solver.seed}",
        f"status={status}",
        f"iterations={sol.iterations}",
        f"lambda={_fmt(sol.lam)}",
        *digests,
    ]
    (out / "manifest.txt").write_text("\n".join(manifest) + "\n")


def load_run(run_dir: Path):
    """Rebuild ``(spec, solution, stored_certificate, problems)`` from a run directory.

    ``problems`` lists fields whose checksum does not match their header.
    """
    run = parse_config((run_dir / "config.ini").read_text())
    problems = []

    def field_(name):
        path = run_dir / f"{name}.f64"
        try:
            values, header, _ = G.read_field(path, verify=False)
        except (KeyError, ValueError) as exc:
            raise RunDirError(f"cannot decode {path}: {exc}") from None
        if not header["checksum_ok"]:
            problems.append(f"checksum:{name}")
        return values

    grid = run.grid()
    V = field_("V")
    spec = run.problem(V=V)
    m = field_("m")
    momentum = np.stack([field_(f"momentum_{k}") for k in range(grid.dim)])
    w = tuple(field_(f"w_{k}") for k in range(grid.dim))
    u = field_("u")
    stored = Certificate.parse((run_dir / "certificate.txt").read_text())
    lam = float(stored.get("lambda", "nan"))
    sol = Solution(m=m, momentum=momentum, w=w, u=u, lam=lam, objective=np.nan,
                   iterations=0, converged=False)
    for name in ("p", "mu"):
        field_(name)
    return run, spec, sol, stored, problems


def _close(a: float, b: float) -> bool:
    if np.isnan(a) and np.isnan(b):
        return True
    if np.isinf(a) or np.isinf(b):
        return a == b
    return abs(a - b) <= ROUNDTRIP_TOL * max(1.0, abs(b))


# commands

def _configure_threads(n: int | None):
    if n is None:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def _certify_solution(sol, spec, cfg: SolverConfig) -> Certificate:
    return certify(sol, spec, tol_gap=cfg.tol_gap, tol_primal=cfg.tol_primal)


def _report(cert: Certificate, out: Path):
    print(f"gap_rel={cert.gap_rel:.3e} lambda={cert.lam:.6g} "
          f"verdict={'pass' if cert.passed else 'fail'} run_dir={out}")
    if cert.failures:
        print("failures: " + ", ".join(cert.failures))


def cmd_solve(run: RunConfig, out: Path) -> int:
    if run.eps_schedule:
        raise ConfigError("solve takes eps; use sweep for an eps_schedule")
    spec = run.problem()
    status = "converged"
    try:
        sol = solve(spec, run.solver)
    except MaxIterExceeded as exc:
        sol, status = exc.solution, "max_iter"
    cert = _certify_solution(sol, spec, run.solver)
    write_run(out, run, spec, sol, cert, status)
    _report(cert, out)
    if status == "max_iter":
        return EXIT_MAXITER
    return EXIT_PASS if cert.passed else EXIT_FAIL


def cmd_certify(run_dir: Path) -> int:
    run, spec, sol, stored, problems = load_run(run_dir)
    cert = _certify_solution(sol, spec, run.solver)
    mismatched = []
    for key, value in cert.values().items():
        if key not in stored:
            mismatched.append(key)
            continue
        if not _close(value, float(stored[key])):
            mismatched.append(key)
    verdict_ok = stored.get("verdict") == ("pass" if cert.passed else "fail")
    for line in problems:
        print(line)
    for key in mismatched:
        print(f"mismatch {key}: stored={stored.get(key)} recomputed={_fmt(cert.values()[key])}")
    if not verdict_ok:
        print(f"mismatch verdict: stored={stored.get('verdict')}")
    if cert.failures:
        print("failures: " + ", ".join(cert.failures))
    ok = not problems and not mismatched and verdict_ok and cert.passed
    print(f"certify {'pass' if ok else 'fail'} run_dir={run_dir}")
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_sweep(run: RunConfig, out: Path) -> int:
    schedule = run.eps_schedule or (run.eps,)
    spec = run.problem()
    certs = []

    def on_stage(k, stage_spec, sol):
        cert = _certify_solution(sol, stage_spec, run.solver)
        write_run(out / f"stage_{k:02d}", run.stage(schedule[k]), stage_spec, sol, cert, "converged")
        certs.append(cert)

    try:
        result = homotopy_solve(spec, schedule, run.solver, on_stage=on_stage)
    except MaxIterExceeded as exc:
        k = exc.stage
        stage_spec = spec.with_eps(schedule[k])
        cert = _certify_solution(exc.solution, stage_spec, run.solver)
        write_run(out / f"stage_{k:02d}", run.stage(schedule[k]), stage_spec,
                  exc.solution, cert, "max_iter")
        _report(cert, out / f"stage_{k:02d}")
        return EXIT_MAXITER
    rows = ["eps,dm_l2,gap"]
    for k, eps in enumerate(result.eps):
        dm = result.distances[k - 1] if k > 0 else float("nan")
        rows.append(f"{_fmt(eps)},{_fmt(dm)},{_fmt(result.gaps[k])}")
    (out / "stages.csv").write_text("\n".join(rows) + "\n")
    for k, cert in enumerate(certs):
        _report(cert, out / f"stage_{k:02d}")
    return EXIT_PASS if all(c.passed for c in certs) else EXIT_FAIL


def cmd_selftest(debug_fail: bool = False) -> int:
    from mfgcert.selftest import run_suites

    results = run_suites(tol_scale=0.0 if debug_fail else 1.0)
    print(f"{'suite':<14} {'max_error':>12} {'tolerance':>12}  verdict")
    for r in results:
        print(f"{r.name:<14} {r.error:12.3e} {r.tolerance:12.3e}  {'pass' if r.passed else 'fail'}")
    return EXIT_PASS if all(r.passed for r in results) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfgcert", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path)
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
    p = sub.add_parser("certify")
    p.add_argument("run_dir", type=Path, nargs="?")
    p.add_argument("--out", type=Path, help="run directory (alternative to the positional)")
    p.add_argument("--threads", type=int)
    p = sub.add_parser("selftest")
    p.add_argument("--debug-fail-selftest", action="store_true")
    p.add_argument("--threads", type=int)
    return parser


def _threads(args) -> int | None:
    if args.threads is not None:
        n = args.threads
    elif os.environ.get("MFG_THREADS"):
        try:
            n = int(os.environ["MFG_THREADS"])
        except ValueError:
            raise ConfigError("MFG_THREADS must be an integer") from None
    else:
        return None
    if n < 1:
        raise ConfigError("thread count must be at least 1")
    return n


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    limiter = None
    try:
        limiter = _configure_threads(_threads(args))
        if args.command == "selftest":
            return cmd_selftest(args.debug_fail_selftest)
        if args.command == "certify":
            run_dir = args.run_dir or args.out
            if run_dir is None:
                raise ConfigError("certify needs a run directory")
            return cmd_certify(run_dir)
        run = load_config(args.config)
        if args.seed is not None:
            run.solver = dataclasses.replace(run.solver, seed=args.seed)
        out = args.out or run.output
        if out is None:
            raise ConfigError("no output directory: pass --out or set [output] dir")
        command = cmd_solve if args.command == "solve" else cmd_sweep
        return command(run, out)
    except SpecError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())

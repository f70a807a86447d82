"""Acceptance criteria, one marker per criterion.

Run ``pytest tests/test_acceptance.py`` (or this file as a script); the
terminal summary prints one PASS/FAIL line per criterion.
"""

import math
import time

import numpy as np
import pytest
from threadpoolctl import threadpool_limits

from mfgcert import grid as G
from mfgcert.certificates import Certificate, certify, extract_multipliers
from mfgcert.cli import main
from mfgcert.grid import Grid
from mfgcert.perspective import (
    CongestionParams,
    ell,
    hamiltonian,
    project_conjugate,
    prox_ell,
    subdiff_element,
)
from mfgcert.problems import deep_well_problem, uniform_problem, well_problem
from mfgcert.solver import Solution, SolverConfig, homotopy_solve, objective, solve
from oracles import conjugate_sup, prox_brute
from test_certificates import random_feasible

KERNELS = [
    CongestionParams(2.0),
    CongestionParams(2.0, 3.0, 1.0),
    CongestionParams(1.5, 3.0, 0.1),
    CongestionParams(4.0),
]


def l2(grid, a, b):
    d = a - b
    return math.sqrt(G.inner_cells(grid, d, d))


def timed_solve(spec, config=SolverConfig(), **kwargs):
    with threadpool_limits(limits=1):
        t0 = time.perf_counter()
        sol = solve(spec, config, **kwargs)
        return sol, time.perf_counter() - t0


@pytest.fixture(scope="module")
def uniform_run():
    spec = uniform_problem((64, 64), eps=1e-3)
    sol, seconds = timed_solve(spec)
    return spec, sol, seconds


@pytest.fixture(scope="module")
def well_run():
    spec = well_problem((64, 64), eps=1e-3)
    sol, seconds = timed_solve(spec)
    return spec, sol, seconds


@pytest.fixture(scope="module")
def deep_run():
    spec = deep_well_problem((64, 64), eps=1e-3)
    sol, seconds = timed_solve(spec)
    return spec, sol, seconds


# 1

@pytest.mark.criterion(1, "uniform equilibrium on [0,2]^2, 64x64")
def test_uniform_equilibrium(uniform_run):
    spec, sol, seconds = uniform_run
    cert = certify(sol, spec)
    mult = extract_multipliers(sol, spec, cert.lam)
    w_norm = math.sqrt(sum(float(np.sum(wk ** 2)) for wk in sol.w))
    print(f"uniform: iterations={sol.iterations} seconds={seconds:.2f} "
          f"max|m-1/4|={np.abs(sol.m - 0.25).max():.2e} |w|={w_norm:.2e} lambda={sol.lam:.6f} "
          f"gap={cert.gap:.2e}")
    assert np.abs(sol.m - 0.25).max() <= 1e-4
    assert w_norm <= 1e-6
    assert abs(sol.lam + 0.25) <= 1e-3
    assert cert.gap <= 1e-5 and cert.gap_rel <= 1e-5
    assert G.integrate(spec.grid, mult.p) <= 1e-6
    assert G.integrate(spec.grid, mult.mu) <= 1e-6
    assert seconds <= 60


# 2

@pytest.mark.criterion(2, "strong duality at optima and weak duality at random feasible points")
@pytest.mark.parametrize("which", ["uniform", "well"])
def test_strong_duality(which, uniform_run, well_run):
    spec, sol, _ = uniform_run if which == "uniform" else well_run
    cert = certify(sol, spec)
    print(f"{which}: gap_rel={cert.gap_rel:.3e}")
    assert cert.gap_rel <= 1e-5
    assert cert.gap >= -1e-10


@pytest.mark.criterion(2, "strong duality at optima and weak duality at random feasible points")
def test_weak_duality_random_feasible(well_run):
    spec, sol, _ = well_run
    cert = certify(sol, spec)
    rng = np.random.default_rng(2024)
    worst = np.inf
    for _ in range(100):
        m, momentum = random_feasible(spec, rng)
        probe = Solution(m=m, momentum=momentum, w=G.face_average(spec.grid, momentum),
                         u=sol.u, lam=sol.lam, objective=np.nan, iterations=0)
        # primal value of the random point against the certified dual value
        gap = objective(spec, m, momentum) - cert.dual_value
        worst = min(worst, gap)
        assert certify(probe, spec).gap >= -1e-10
    print(f"smallest gap over 100 random feasible points: {worst:.3e}")
    assert worst >= -1e-10


# 3

@pytest.mark.criterion(3, "congestion activation in a deep well")
def test_congestion_activation(deep_run):
    spec, sol, seconds = deep_run
    grid = spec.grid
    cert = certify(sol, spec)
    V = spec.coupling.V
    # the bottom of the well (within 1% of its depth) covers less than unit area
    bottom = float(np.sum(V <= V.min() + 0.01 * abs(V.min())) * grid.cell_volume)
    print(f"deep well: iterations={sol.iterations} seconds={seconds:.1f} max m={sol.m.max():.8f} "
          f"pressure mass={cert.pressure_mass:.4f} compl_p={cert.compl_p:.2e} "
          f"compl_mu={cert.compl_mu:.2e} weak={cert.weak_concentration:.2e} bottom area={bottom:.3f}")
    assert bottom < 1
    assert sol.m.max() >= 1 - 1e-4
    assert cert.pressure_mass > 0
    assert cert.compl_p <= 1e-4 and cert.compl_mu <= 1e-4
    assert cert.weak_concentration <= 1e-4
    assert cert.passed
    assert seconds <= 300


# 4

@pytest.mark.criterion(4, "kernel oracle equivalence")
def test_kernel_oracles():
    rng = np.random.default_rng(4)
    t0 = time.perf_counter()
    worst_h, worst_prox, worst_proj = 0.0, 0.0, -np.inf
    for params in KERNELS:
        z = rng.normal(size=(1000, 2)) * rng.uniform(0, 5, (1000, 1))
        H = hamiltonian(z, params)
        ref = np.array([conjugate_sup(np.linalg.norm(zi), params.q, params.eps, params.r) for zi in z])
        worst_h = max(worst_h, float(np.max(np.abs(H - ref) / np.maximum(1, np.abs(ref)))))

        alpha = rng.normal(size=50) * 2 + 1
        beta = rng.normal(size=(50, 2)) * 2
        pa, pb = project_conjugate(alpha, beta, params)
        d_proj = np.hypot(pa - alpha, np.linalg.norm(pb - beta, axis=-1))
        zb = rng.normal(size=(10_000, 2)) * rng.uniform(0, 4, (10_000, 1))
        za = -hamiltonian(zb, params) - rng.exponential(0.3, 10_000)
        for i in range(50):
            d = np.hypot(za - alpha[i], np.linalg.norm(zb - beta[i], axis=-1))
            worst_proj = max(worst_proj, float(d_proj[i] - d.min()))

        a0 = rng.normal(size=250)
        b0 = rng.normal(size=250) * 1.5
        qa, qb = prox_ell(a0, b0[:, None], 0.8, params)
        for i in range(250):
            ref = prox_brute(a0[i], b0[i], 0.8, params.q, params.eps, params.r)
            worst_prox = max(worst_prox, float(np.hypot(qa[i] - ref[0], qb[i, 0] - ref[1])))
    seconds = time.perf_counter() - t0
    print(f"kernels: H err={worst_h:.2e} prox err={worst_prox:.2e} "
          f"projection excess={worst_proj:.2e} seconds={seconds:.1f}")
    assert worst_h <= 1e-8
    assert worst_proj <= 0.0
    assert worst_prox <= 1e-6
    assert seconds <= 30


# 5

@pytest.mark.criterion(5, "discrete operator exactness")
def test_operator_adjointness():
    grid = Grid((2.0, 2.0), (4, 4))
    N, F = grid.size, grid.n_faces
    grad = np.column_stack([grid.flatten_faces(G.gradient(grid, e.reshape(grid.shape))) for e in np.eye(N)])
    div = np.column_stack([G.divergence(grid, grid.unflatten_faces(e)).ravel() for e in np.eye(F)])
    err = np.abs(grad + div.T).max() / np.abs(grad).max()
    print(f"adjointness error {err:.2e}")
    assert err <= 1e-13


@pytest.mark.criterion(5, "discrete operator exactness")
def test_poisson_second_order():
    errors = []
    for n in (8, 16, 32, 64):
        grid = Grid((2.0, 2.0), (n, n))
        x, y = grid.centers()
        exact = np.cos(np.pi * x / 2) * np.cos(np.pi * y)
        rhs = (np.pi ** 2 / 4 + np.pi ** 2) * exact
        rhs -= G.integrate(grid, rhs) / grid.measure
        u = G.neumann_poisson(grid, rhs, mean=float(exact.mean()), tol=1e-13)
        errors.append(np.abs(u - exact).max())
    ratios = [a / b for a, b in zip(errors, errors[1:])]
    print("error ratios " + ", ".join(f"{r:.3f}" for r in ratios))
    assert all(3.6 <= r <= 4.4 for r in ratios)


# 6

@pytest.mark.criterion(6, "subdifferential elements satisfy Fenchel equality")
def test_fenchel_equality():
    rng = np.random.default_rng(6)
    worst_eq, worst_slack = 0.0, np.inf
    worst_rel = np.inf
    for params in KERNELS:
        # speeds |w|/m up to 10 keep |alpha| where an absolute 1e-12 is above roundoff
        m = rng.uniform(1e-3, 5, 1000)
        theta = rng.uniform(0, 2 * np.pi, 1000)
        v = rng.uniform(0, 10, 1000)
        w = (m * v)[:, None] * np.column_stack([np.cos(theta), np.sin(theta)])
        alpha, beta = subdiff_element(m, w, params)
        val = ell(m, w, params)
        eq = np.abs(alpha * m + np.sum(beta * w, axis=-1) - val) / (1 + val)
        slack = -(alpha + hamiltonian(beta, params))
        worst_eq = max(worst_eq, float(eq.max()))
        worst_slack = min(worst_slack, float(slack.min()))
        # extreme speeds: the slack is only meaningful relative to |alpha|
        m = rng.uniform(1e-3, 5, 1000)
        w = rng.normal(size=(1000, 2)) * rng.uniform(0, 5, (1000, 1))
        alpha, beta = subdiff_element(m, w, params)
        rel = -(alpha + hamiltonian(beta, params)) / np.maximum(1, np.abs(alpha))
        worst_rel = min(worst_rel, float(rel.min()))
    print(f"Fenchel equality error {worst_eq:.2e}, worst slack {worst_slack:.2e}, "
          f"worst relative slack at extreme speeds {worst_rel:.2e}")
    assert worst_eq <= 1e-10
    assert worst_slack >= -1e-12
    assert worst_rel >= -1e-12


# 7

@pytest.mark.criterion(7, "homotopy stability on the well problem")
def test_homotopy_stability():
    spec = well_problem((64, 64), eps=1e-1)
    schedule = [1e-1, 1e-2, 1e-3, 1e-4]
    with threadpool_limits(limits=1):
        t0 = time.perf_counter()
        result = homotopy_solve(spec, schedule)
        seconds = time.perf_counter() - t0
    final = certify(result.solutions[-1], spec.with_eps(schedule[-1]))
    print("distances " + ", ".join(f"{d:.3e}" for d in result.distances) + f" seconds={seconds:.1f}")
    assert all(a > b for a, b in zip(result.distances, result.distances[1:]))
    assert final.passed
    assert seconds <= 900


# 8

@pytest.mark.criterion(8, "uniqueness trace across seeds and initialisations")
def test_uniqueness_trace(deep_run):
    spec, base, _ = deep_run
    a, _ = timed_solve(spec, SolverConfig(seed=11, init_perturbation=0.9))
    b, _ = timed_solve(spec, SolverConfig(seed=12, init_perturbation=0.9))
    # a start from the optimum of a different problem
    other = solve(uniform_problem((64, 64)))
    c, _ = timed_solve(spec, warm_start=other)
    dists = [l2(spec.grid, a.m, b.m), l2(spec.grid, a.m, base.m), l2(spec.grid, c.m, base.m)]
    print("pairwise L2 distances " + ", ".join(f"{d:.2e}" for d in dists))
    assert max(dists) <= 1e-5


# 9

CONFIG = """
[domain]
extents = 2, 2
cells = 32, 32

[congestion]
q = 2
r = 3
eps = 1e-3

[coupling]
potential = cosine_well
rho = 0.05
theta = 1

[coupling.potential]
depth = 30

[solver]
seed = 5
"""


@pytest.mark.criterion(9, "round-trip certification and byte-identical reruns")
def test_round_trip(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(CONFIG)
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["solve", "--config", str(cfg), "--out", str(first)]) == 0
    assert main(["solve", "--config", str(cfg), "--out", str(second)]) == 0
    for path in sorted(first.iterdir()):
        assert path.read_bytes() == (second / path.name).read_bytes(), path.name
    assert main(["certify", str(first)]) == 0

    # recompute independently of the CLI and compare every key
    stored = Certificate.parse((first / "certificate.txt").read_text())
    spec = deep_well_problem((32, 32))
    fields = {name: G.read_field(first / f"{name}.f64")[0]
              for name in ("m", "u", "momentum_0", "momentum_1", "w_0", "w_1")}
    sol = Solution(m=fields["m"], momentum=np.stack([fields["momentum_0"], fields["momentum_1"]]),
                   w=(fields["w_0"], fields["w_1"]), u=fields["u"], lam=float(stored["lambda"]),
                   objective=np.nan, iterations=0)
    cert = certify(sol, spec)
    for key, value in cert.values().items():
        ref = float(stored[key])
        assert abs(value - ref) <= 1e-12 * max(1.0, abs(ref)), key


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))

"""Discrete density-constrained problem and its ADMM solver.

Unknowns are the cell density ``m`` and a cell-centred momentum ``b``; the
face flux entering the continuity equation is its face average
``w = face_average(b)``.  The discrete problem is

    min  sum_cells vol [ ell(m, b) + F(x, m) ]
    s.t. -laplacian(m) + divergence(w) = 0,   integrate(m) = 1,   0 <= m <= 1.

Putting ``ell`` on collocated cell pairs and averaging to faces in the
constraint makes the cell Hamiltonian ``H(-cell_average(gradient(u)))`` the
exact discrete dual, so the duality gap reported by
:mod:`mfgcert.certificates` is a true certificate.

ADMM (Benamou-Brenier ALG2 pattern): ``z = (m, b)`` is projected onto the
affine constraint set, ``zeta1 = (m1, b1)`` carries ``ell`` and ``zeta2``
carries ``F + indicator[0, 1]``; both are pointwise proxes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import minimize_scalar

from mfgcert import grid as G
from mfgcert.coupling import Coupling
from mfgcert.errors import MaxIterExceeded, SpecError
from mfgcert.grid import Grid
from mfgcert.perspective import CongestionParams, ell, prox_ell

log = logging.getLogger(__name__)

__all__ = [
    "ProblemSpec",
    "SolverConfig",
    "Solution",
    "HomotopyResult",
    "feasible_init",
    "objective",
    "residuals",
    "solve",
    "homotopy_solve",
]


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    grid: Grid
    congestion: CongestionParams
    coupling: Coupling

    def __post_init__(self):
        self.congestion.check_dim(self.grid.dim)
        V = self.coupling.V
        if V.ndim == 0:
            object.__setattr__(
                self, "coupling",
                Coupling(np.full(self.grid.shape, float(V)), self.coupling.rho,
                         self.coupling.theta))
        elif V.shape != self.grid.shape:
            raise SpecError(f"potential shape {V.shape} does not match grid {self.grid.shape}")

    def with_eps(self, eps: float) -> "ProblemSpec":
        return ProblemSpec(self.grid, self.congestion.with_eps(eps), self.coupling)


@dataclass(frozen=True)
class SolverConfig:
    penalty: float = 1.0
    max_iter: int = 20000
    tol_primal: float = 1e-6
    tol_dual: float = 1e-6
    tol_gap: float = 1e-5
    linear_tol: float = 1e-10
    seed: int = 0
    init_perturbation: float = 0.0
    adapt_every: int = 25
    adapt_factor: float = 2.0
    adapt_ratio: float = 10.0
    check_every: int = 50

    def __post_init__(self):
        for name in ("penalty", "tol_primal", "tol_dual", "tol_gap", "linear_tol"):
            if not getattr(self, name) > 0:
                raise SpecError(f"{name} must be positive")
        if self.max_iter < 1:
            raise SpecError("max_iter must be at least 1")
        if self.init_perturbation < 0:
            raise SpecError("init_perturbation must be nonnegative")


@dataclass
class _State:
    m: np.ndarray          # z, the projected iterate (flat, N)
    b: np.ndarray          # (N, d)
    m1: np.ndarray         # zeta1
    b1: np.ndarray
    m2: np.ndarray         # zeta2
    y1m: np.ndarray        # scaled duals
    y1b: np.ndarray
    y2: np.ndarray
    rho: float
    u: np.ndarray = None   # multiplier of the last projection
    lam: float = 0.0
    dzeta: tuple = None    # last zeta increments, for the dual residual


@dataclass(frozen=True, eq=False)
class Solution:
    m: np.ndarray
    momentum: np.ndarray   # (dim, *cells)
    w: tuple
    u: np.ndarray
    lam: float
    objective: float
    iterations: int
    history: list = field(default_factory=list)
    converged: bool = False
    penalty: float = 1.0
    state: _State = field(default=None, repr=False)


@dataclass(frozen=True, eq=False)
class HomotopyResult:
    eps: list
    solutions: list
    distances: list        # L2 distance of m between consecutive stages
    gaps: list


class _AffineProjector:
    """Euclidean projection onto ``{R z = 0, integrate(m) = 1}``.

    The metric weights ``m`` twice (it appears in both consensus copies).
    ``S = R M^-1 R^T`` has the constants as its kernel; pinning one entry
    with ``e0 e0^T`` gives an invertible matrix with the same solutions on
    the (compatible) range.
    """

    def __init__(self, grid: Grid):
        self.grid = grid
        N, d = grid.size, grid.dim
        self.Rm = (-grid.laplacian_matrix).tocsr()
        self.Rb = (grid.divergence_matrix @ grid.average_matrix.T).tocsr()
        S = 0.5 * (self.Rm @ self.Rm.T) + self.Rb @ self.Rb.T
        pin = sp.csr_matrix(([1.0], ([0], [0])), shape=(N, N))
        self.lu = spla.splu((S + pin).tocsc())
        self.RmT = self.Rm.T.tocsr()
        self.RbT = self.Rb.T.tocsr()
        self.N, self.d = N, d

    def residual(self, m, b):
        return self.Rm @ m + self.Rb @ b.T.ravel()

    def project(self, m0, b0):
        """Return ``(m, b, y, shift)``: the projection, the constraint
        multiplier and the constant added to enforce the mass."""
        r = self.residual(m0, b0)
        y = self.lu.solve(r)
        y -= y.mean()
        m = m0 - 0.5 * (self.RmT @ y)
        b = b0 - (self.RbT @ y).reshape(self.d, self.N).T
        shift = (1.0 - G.integrate(self.grid, m)) / self.grid.measure
        return m + shift, b, y, shift


@lru_cache(maxsize=8)
def _projector(grid: Grid) -> _AffineProjector:
    return _AffineProjector(grid)


def feasible_init(spec: ProblemSpec):
    """The uniform density with zero flux, always feasible since |Omega| > 1."""
    grid = spec.grid
    return np.full(grid.shape, 1.0 / grid.measure), grid.zeros_faces()


def objective(spec: ProblemSpec, m, momentum) -> float:
    """Primal value ``sum vol [ell(m, b) + F(m)]``; ``inf`` outside the domain."""
    m = np.asarray(m, dtype=float).reshape(spec.grid.shape)
    b = np.moveaxis(np.asarray(momentum, dtype=float).reshape((spec.grid.dim,) + spec.grid.shape), 0, -1)
    cost = ell(m, b, spec.congestion) + spec.coupling.F(m)
    return float(np.sum(cost) * spec.grid.cell_volume)


def _flat_objective(spec, m1, b1, m2):
    grid = spec.grid
    cost = np.sum(ell(m1, b1, spec.congestion))
    cost += np.sum(spec.coupling.F(m2.reshape(grid.shape)))
    return float(cost * grid.cell_volume)


def residuals(spec: ProblemSpec, state: _State):
    """``(primal_residual, dual_residual, pde_residual, mass_error, box_violation)``."""
    grid = spec.grid
    proj = _projector(grid)
    diff = np.concatenate([state.m - state.m1, (state.b - state.b1).ravel(), state.m - state.m2])
    zs = np.concatenate([state.m, state.b.ravel(), state.m])
    zetas = np.concatenate([state.m1, state.b1.ravel(), state.m2])
    denom = max(np.linalg.norm(zs), np.linalg.norm(zetas), 1e-300)
    primal = float(np.linalg.norm(diff) / denom)
    if state.dzeta is None:
        dual = 0.0
    else:
        dm1, db1, dm2 = state.dzeta
        num = state.rho * np.linalg.norm(np.concatenate([dm1 + dm2, db1.ravel()]))
        yn = state.rho * np.linalg.norm(np.concatenate([state.y1m + state.y2, state.y1b.ravel()]))
        dual = float(num / max(yn, 1e-300)) if num > 0 else 0.0
    pde = float(np.linalg.norm(proj.residual(state.m, state.b)) * np.sqrt(grid.cell_volume))
    mass = abs(float(np.sum(state.m)) * grid.cell_volume - 1.0)
    box = float(max(0.0, -state.m.min(), state.m.max() - 1.0))
    return primal, dual, pde, mass, box


def _repair(spec: ProblemSpec, m, b):
    """Pull ``(m, b)`` strictly into the box along the segment towards the
    uniform feasible point; the affine constraints are preserved."""
    m0 = 1.0 / spec.grid.measure
    lo, hi = float(m.min()), float(m.max())
    if lo > 0 and hi <= 1:
        return m, b
    theta0 = 0.0
    if lo <= 0:
        theta0 = max(theta0, -lo / (m0 - lo))
    if hi > 1:
        theta0 = max(theta0, (hi - 1) / (hi - m0))
    hi_theta = min(1.0, 2 * theta0 + 1e-12)

    def cost(theta):
        mt = (1 - theta) * m + theta * m0
        if mt.min() < 0 or mt.max() > 1:
            return np.inf
        return (np.sum(ell(mt, (1 - theta) * b, spec.congestion))
                + np.sum(spec.coupling.F(mt.reshape(spec.grid.shape))))

    lo_theta = theta0 * (1 + 1e-9) + 1e-300
    res = minimize_scalar(cost, bounds=(lo_theta, hi_theta), method="bounded",
                          options={"xatol": max(1e-3 * theta0, 1e-15)})
    theta = res.x if np.isfinite(res.fun) else hi_theta
    return (1 - theta) * m + theta * m0, (1 - theta) * b


def _to_solution(spec, state, iterations, history, converged):
    grid = spec.grid
    m, b = _repair(spec, state.m, state.b)
    momentum = np.moveaxis(b.reshape(grid.shape + (grid.dim,)), -1, 0).copy()
    mm = m.reshape(grid.shape)
    u = state.u.reshape(grid.shape) if state.u is not None else np.zeros(grid.shape)
    return Solution(
        m=mm,
        momentum=momentum,
        w=G.face_average(grid, momentum),
        u=u - u.mean(),
        lam=float(state.lam),
        objective=objective(spec, mm, momentum),
        iterations=iterations,
        history=history,
        converged=converged,
        penalty=state.rho,
        state=state,
    )


def _initial_state(spec: ProblemSpec, config: SolverConfig, warm_start=None) -> _State:
    grid = spec.grid
    N, d = grid.size, grid.dim
    if warm_start is not None:
        s = warm_start.state
        return _State(s.m.copy(), s.b.copy(), s.m1.copy(), s.b1.copy(), s.m2.copy(),
                      s.y1m.copy(), s.y1b.copy(), s.y2.copy(), s.rho,
                      None if s.u is None else s.u.copy(), s.lam)
    m_uniform, _ = feasible_init(spec)
    m = m_uniform.ravel().copy()
    if config.init_perturbation > 0:
        rng = np.random.default_rng(config.seed)
        xi = rng.uniform(-1.0, 1.0, N)
        xi -= xi.mean()
        m = m * (1 + config.init_perturbation * xi / max(np.abs(xi).max(), 1e-300))
    proj = _projector(grid)
    m, b, _, _ = proj.project(m, np.zeros((N, d)))
    zeros = np.zeros(N)
    return _State(m, b, m.copy(), b.copy(), np.clip(m, 0, 1), zeros.copy(),
                  np.zeros((N, d)), zeros.copy(), config.penalty)


def solve(spec: ProblemSpec, config: SolverConfig = SolverConfig(), warm_start=None,
          callback=None) -> Solution:
    """Run ADMM until the residuals and the certified duality gap are small.

    Raises :class:`MaxIterExceeded` (carrying the best iterate) when
    ``config.max_iter`` is reached first.
    """
    from mfgcert.certificates import certify

    grid = spec.grid
    proj = _projector(grid)
    params, coupling = spec.congestion, spec.coupling
    state = _initial_state(spec, config, warm_start)
    history = []
    best = None
    best_gap = np.inf

    for it in range(1, config.max_iter + 1):
        rho = state.rho
        # z-step: projection of the averaged consensus targets
        t_m = 0.5 * ((state.m1 - state.y1m) + (state.m2 - state.y2))
        t_b = state.b1 - state.y1b
        state.m, state.b, y, shift = proj.project(t_m, t_b)
        state.u = -rho * y
        state.lam = -2.0 * rho * shift

        # zeta-steps: pointwise proxes
        m1_old, b1_old, m2_old = state.m1, state.b1, state.m2
        state.m1, state.b1 = prox_ell(state.m + state.y1m, state.b + state.y1b, 1.0 / rho, params)
        state.m2 = coupling.prox_box((state.m + state.y2).reshape(grid.shape), 1.0 / rho).ravel()
        state.dzeta = (state.m1 - m1_old, state.b1 - b1_old, state.m2 - m2_old)

        # scaled multiplier update
        state.y1m += state.m - state.m1
        state.y1b += state.b - state.b1
        state.y2 += state.m - state.m2

        primal, dual, pde, mass, box = residuals(spec, state)
        row = {
            "iter": it,
            "primal_res": primal,
            "dual_res": dual,
            "gap": np.nan,
            "objective": _flat_objective(spec, state.m1, state.b1, state.m2),
            "mass_error": mass,
        }
        small = primal <= config.tol_primal and dual <= config.tol_dual
        if it % config.check_every == 0 or (small and it % 5 == 0) or it == config.max_iter:
            sol = _to_solution(spec, state, it, history, False)
            cert = certify(sol, spec, tol_gap=config.tol_gap, tol_primal=config.tol_primal)
            row["gap"] = cert.gap_rel
            if cert.gap_rel < best_gap:
                best_gap, best = cert.gap_rel, sol
            if small and cert.passed:
                history.append(row)
                return replace(sol, converged=True, iterations=it)
        history.append(row)
        if callback is not None:
            callback(it, row)

        if it % config.adapt_every == 0 and state.dzeta is not None:
            if primal > config.adapt_ratio * dual:
                _rescale(state, config.adapt_factor)
            elif dual > config.adapt_ratio * primal:
                _rescale(state, 1.0 / config.adapt_factor)

    if best is None:
        best = _to_solution(spec, state, config.max_iter, history, False)
    raise MaxIterExceeded(
        f"ADMM did not certify within {config.max_iter} iterations "
        f"(best relative gap {best_gap:.3e})", solution=best)


def _rescale(state: _State, factor: float):
    state.rho *= factor
    state.y1m /= factor
    state.y1b /= factor
    state.y2 /= factor


def homotopy_solve(spec: ProblemSpec, eps_schedule, config: SolverConfig = SolverConfig(),
                   warm_start=None, on_stage=None) -> HomotopyResult:
    """Solve a decreasing sequence of regularised problems with warm starts.

    ``on_stage(k, stage_spec, solution)`` is called after each stage.
    """
    eps_schedule = [float(e) for e in eps_schedule]
    if not eps_schedule:
        raise SpecError("eps schedule must not be empty")
    if any(e <= 0 for e in eps_schedule):
        raise SpecError("eps schedule entries must be positive")
    if any(b >= a for a, b in zip(eps_schedule, eps_schedule[1:])):
        raise SpecError("eps schedule must be strictly decreasing")
    if spec.congestion.r is None:
        raise SpecError("homotopy needs an exponent r")
    solutions, gaps, distances = [], [], []
    from mfgcert.certificates import certify

    previous = warm_start
    for k, eps in enumerate(eps_schedule):
        stage = spec.with_eps(eps)
        try:
            sol = solve(stage, config, warm_start=previous)
        except MaxIterExceeded as exc:
            exc.stage = k
            raise
        log.info("stage %d eps=%g iterations=%d", k, eps, sol.iterations)
        solutions.append(sol)
        gaps.append(certify(sol, stage, tol_gap=config.tol_gap).gap_rel)
        if k > 0:
            diff = sol.m - solutions[k - 1].m
            distances.append(float(np.sqrt(G.inner_cells(spec.grid, diff, diff))))
        if on_stage is not None:
            on_stage(k, stage, sol)
        previous = sol
    return HomotopyResult(eps_schedule, solutions, distances, gaps)

"""Multiplier recovery and duality-gap certificates.

Given a primal pair ``(m, b)`` and a value function ``u`` (plus the mass
multiplier ``lam``), the HJB row

    -laplacian(u) + H(-grad u) + mu - p - lam = f(x, m)

is split into a pressure ``p >= 0`` and an exclusion multiplier ``mu >= 0``.
``grad u`` at a cell is the average of the two adjacent face gradients per
axis, the same averaging the solver uses for the flux, so the dual value
below is an exact lower bound for every feasible primal point.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from mfgcert import grid as G
from mfgcert.perspective import grad_fstar, hamiltonian

__all__ = [
    "Multipliers",
    "Certificate",
    "cell_gradient",
    "extract_multipliers",
    "fp_residual",
    "complementarity",
    "weak_concentration",
    "dual_objective",
    "dual_point",
    "refine_lambda",
    "certify",
    "active_sets",
    "CERTIFICATE_KEYS",
]

CERTIFICATE_KEYS = (
    "primal_value", "dual_value", "gap", "gap_rel", "hjb_residual", "fp_residual",
    "compl_p", "compl_mu", "weak_concentration", "lambda", "mass_error",
    "pde_residual", "box_violation", "pressure_mass",
)


@dataclass(frozen=True, eq=False)
class Multipliers:
    u: np.ndarray
    p: np.ndarray
    mu: np.ndarray
    lam: float


@dataclass(frozen=True)
class Certificate:
    primal_value: float
    dual_value: float
    gap: float
    gap_rel: float
    hjb_residual: float
    fp_residual: float
    compl_p: float
    compl_mu: float
    weak_concentration: float
    lam: float
    mass_error: float
    pde_residual: float
    box_violation: float
    pressure_mass: float
    passed: bool = False
    failures: tuple = field(default=())

    def values(self) -> dict:
        out = asdict(self)
        out["lambda"] = out.pop("lam")
        out.pop("passed")
        out.pop("failures")
        return {k: out[k] for k in CERTIFICATE_KEYS}

    def to_text(self) -> str:
        lines = [f"{k}={v:.17g}" for k, v in self.values().items()]
        lines.append(f"verdict={'pass' if self.passed else 'fail'}")
        if self.failures:
            lines.append("failures=" + ",".join(self.failures))
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse(text: str) -> dict:
        out = {}
        for line in text.splitlines():
            if "=" in line:
                key, _, value = line.partition("=")
                out[key.strip()] = value.strip()
        return out


def cell_gradient(grid, u) -> np.ndarray:
    """Face gradient of ``u`` averaged to cells, components on the last axis."""
    return np.moveaxis(G.cell_average(grid, G.gradient(grid, u)), 0, -1)


def _hjb_terms(spec, u):
    grid = spec.grid
    lap_u = G.laplacian(grid, u)
    beta = -cell_gradient(grid, u)
    return lap_u, beta, hamiltonian(beta, spec.congestion)


def _split(spec, m, lap_u, ham, lam):
    g = spec.coupling.f(m) + lam + lap_u - ham
    return np.maximum(-g, 0.0), np.maximum(g, 0.0)


def extract_multipliers(sol, spec, lam=None) -> Multipliers:
    """Split the HJB row into pressure ``p`` and exclusion ``mu``.

    With ``g = f(m) + lam + laplacian(u) - H(-grad u)`` the row reads
    ``mu - p = g``, so ``p = max(-g, 0)`` and ``mu = max(g, 0)``.
    """
    lam = sol.lam if lam is None else lam
    u = np.asarray(sol.u, dtype=float)
    lap_u, _, ham = _hjb_terms(spec, u)
    p, mu = _split(spec, sol.m, lap_u, ham, lam)
    return Multipliers(u=u, p=p, mu=mu, lam=float(lam))


def fp_residual(sol, spec) -> float:
    """Relative mismatch between ``w`` and the optimal-feedback flux.

    The feedback flux is the face average of ``m grad F*(-grad u)``.
    """
    grid = spec.grid
    beta = -cell_gradient(grid, sol.u)
    flux = np.moveaxis(sol.m[..., None] * grad_fstar(beta, spec.congestion), -1, 0)
    target = G.face_average(grid, flux)
    diff = np.sqrt(sum(np.sum((wk - tk) ** 2) for wk, tk in zip(sol.w, target)))
    scale = max(np.sqrt(sum(np.sum(wk ** 2) for wk in sol.w)),
                np.sqrt(sum(np.sum(tk ** 2) for tk in target)))
    return float(diff / scale) if diff > 0 else 0.0


def complementarity(sol, mult, grid):
    """``(<p, 1 - m>, <mu, m>)`` as discrete integrals."""
    return (G.inner_cells(grid, mult.p, 1.0 - sol.m), G.inner_cells(grid, mult.mu, sol.m))


def weak_concentration(sol, mult, spec) -> float:
    """``int dp + <mu - p, m>`` with the pairing evaluated by its weak formula.

    ``<mu - p, m> := lam + int (f(m) - H(-grad u)) m - int grad m . grad u``.
    """
    grid = spec.grid
    _, _, ham = _hjb_terms(spec, mult.u)
    pairing = (mult.lam
               + G.inner_cells(grid, spec.coupling.f(sol.m) - ham, sol.m)
               - G.inner_faces(grid, G.gradient(grid, sol.m), G.gradient(grid, mult.u)))
    return G.integrate(grid, mult.p) + pairing


def dual_objective(mult, spec) -> float:
    """Dual value ``-(int F*(a) + lam + int p)`` at the best admissible ``a``.

    ``a`` must dominate ``c = -laplacian(u) + H(-grad u) - p - lam``; the
    minimiser of ``F*`` over ``[c, inf)`` is ``max(c, V)``.
    """
    if np.any(np.asarray(mult.p) < 0):
        raise ValueError("pressure density must be nonnegative")
    _, a = dual_point(mult, spec)
    fstar = spec.coupling.fstar(a)
    if not np.all(np.isfinite(fstar)):
        return -np.inf
    return -(G.integrate(spec.grid, fstar) + mult.lam + G.integrate(spec.grid, mult.p))


def dual_point(mult, spec):
    """``(c, a)``: the dual constraint bound and the admissible ``a >= c``."""
    lap_u, _, ham = _hjb_terms(spec, mult.u)
    c = -lap_u + ham - mult.p - mult.lam
    return c, np.maximum(c, spec.coupling.fstar_minimizer())


def refine_lambda(sol, spec) -> float:
    """Maximise the dual value over ``lam`` with ``p`` re-split at each ``lam``.

    The dual is concave in ``lam``; its slope is
    ``sum vol s_i - 1`` with ``s_i`` the density recovered from ``F*``
    (clipped at ``m_i``, and 1 where the pressure is active), so the
    maximiser is a root of a nonincreasing function.
    """
    grid, coupling = spec.grid, spec.coupling
    lap_u, _, ham = _hjb_terms(spec, sol.u)
    c0 = -lap_u + ham
    V = coupling.V
    fm = coupling.f(sol.m)
    vol = grid.cell_volume

    def slope(lam):
        s = c0 - lam
        dens = np.where(s > fm, 1.0, 0.0)
        mid = (s > V) & (s <= fm)
        if coupling.rho > 0 and mid.any():
            dens[mid] = ((s[mid] - V[mid]) / coupling.rho) ** (1.0 / coupling.theta)
        return float(np.sum(dens) * vol) - 1.0

    lo = float(np.min(c0 - fm)) - 1.0
    hi = float(np.max(c0 - V)) + 1.0
    return float(brentq(slope, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))


def certify(sol, spec, tol_gap: float = 1e-5, tol_primal: float = 1e-6,
            refine: bool = True) -> Certificate:
    """Recompute every check for ``sol`` from its fields alone."""
    from mfgcert.solver import objective

    grid = spec.grid
    m = np.asarray(sol.m, dtype=float)
    lam = refine_lambda(sol, spec) if refine else sol.lam
    mult = extract_multipliers(sol, spec, lam)
    lap_u, _, ham = _hjb_terms(spec, mult.u)
    hjb = -lap_u + ham + mult.mu - mult.p - mult.lam - spec.coupling.f(m)
    primal = objective(spec, m, sol.momentum)
    dual = dual_objective(mult, spec)
    gap = primal - dual
    gap_rel = gap / (1.0 + abs(primal))
    cp, cmu = complementarity(sol, mult, grid)
    pde = -G.laplacian(grid, m) + G.divergence(grid, sol.w)
    cert = dict(
        primal_value=primal,
        dual_value=dual,
        gap=gap,
        gap_rel=gap_rel,
        hjb_residual=float(np.sqrt(G.inner_cells(grid, hjb, hjb))),
        fp_residual=fp_residual(sol, spec),
        compl_p=cp,
        compl_mu=cmu,
        weak_concentration=weak_concentration(sol, mult, spec),
        lam=mult.lam,
        mass_error=abs(G.integrate(grid, m) - 1.0),
        pde_residual=float(np.sqrt(G.inner_cells(grid, pde, pde))),
        box_violation=float(max(0.0, -m.min(), m.max() - 1.0)),
        pressure_mass=G.integrate(grid, mult.p),
    )
    failures = []
    if not gap_rel <= tol_gap:
        failures.append("gap")
    if not gap >= -1e-10 * (1.0 + abs(primal)):
        failures.append("weak_duality")
    for key in ("mass_error", "pde_residual", "box_violation"):
        if not cert[key] <= tol_primal:
            failures.append(key)
    for key in ("compl_p", "compl_mu", "weak_concentration"):
        if not cert[key] <= 10 * tol_gap:
            failures.append(key)
    return Certificate(**cert, passed=not failures, failures=tuple(failures))


def active_sets(m, tol_active: float = 1e-6):
    """Boolean masks ``(E0, E1, E2)``: ``m ~ 0``, ``m > 0`` and ``0 < m < 1``."""
    m = np.asarray(m, dtype=float)
    E0 = m <= tol_active
    E1 = ~E0
    E2 = (m > tol_active) & (m < 1.0 - tol_active)
    return E0, E1, E2

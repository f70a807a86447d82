"""Oracle-backed kernel checks that need no configuration.

Each suite returns the largest error it observed; :func:`run_suites`
compares them against fixed tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mfgcert import grid as G
from mfgcert.grid import Grid
from mfgcert.perspective import CongestionParams, ell, hamiltonian, project_conjugate, prox_ell

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

KERNEL_PARAMS = (
    CongestionParams(2.0),
    CongestionParams(2.0, 3.0, 1.0),
    CongestionParams(1.5, 3.0, 0.1),
    CongestionParams(4.0),
)


def golden_max(fun, lo: float, hi: float, iters: int = 200) -> tuple[float, float]:
    """Maximise a unimodal scalar function on ``[lo, hi]`` by golden sections."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fun(d)
        if b - a <= 1e-15 * max(1.0, abs(b)):
            break
    x = 0.5 * (a + b)
    return x, fun(x)


def conjugate_oracle(s: float, params: CongestionParams) -> float:
    """``sup_t s t - F(t)`` over ``t >= 0`` with a bracket from ``t^(q-1) <= s``."""
    hi = max(s, 1.0) ** (1.0 / (params.q - 1.0)) + 1.0
    _, val = golden_max(lambda t: s * t - params.F(t), 0.0, hi)
    return max(val, 0.0)


def conjugacy_error(n: int = 1000, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for params in KERNEL_PARAMS:
        z = rng.normal(size=(n, 2)) * rng.uniform(0.0, 5.0, size=(n, 1))
        H = hamiltonian(z, params)
        ref = np.array([conjugate_oracle(float(np.linalg.norm(zi)), params) for zi in z])
        worst = max(worst, float(np.max(np.abs(H - ref) / np.maximum(1.0, np.abs(ref)))))
    return worst


def moreau_error(n: int = 200, seed: int = 1) -> float:
    """Optimality of ``prox_ell`` tested against a brute-force grid search."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for params in KERNEL_PARAMS:
        a = rng.normal(size=n)
        b = rng.normal(size=(n, 1)) * 1.5
        tau = 0.7
        pa, pb = prox_ell(a, b, tau, params)
        for i in range(n):
            best = _brute_prox(a[i], b[i, 0], tau, params, pa[i], pb[i, 0])
            worst = max(worst, best)
    return worst


def _prox_cost(x, y, a0, b0, tau, params):
    return ell(x, y[..., None], params) + ((x - a0) ** 2 + (y - b0) ** 2) / (2 * tau)


def _brute_prox(a0, b0, tau, params, pa, pb, levels: int = 6) -> float:
    """Distance between ``(pa, pb)`` and a zoomed grid-search minimiser."""
    cx, cy, half = max(a0, 0.0), b0, 2.0 + abs(a0) + abs(b0)
    for _ in range(levels):
        xs = np.linspace(max(cx - half, 0.0), cx + half, 81)
        ys = np.linspace(cy - half, cy + half, 81)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        C = _prox_cost(X, Y, a0, b0, tau, params)
        i, j = np.unravel_index(np.argmin(C), C.shape)
        cx, cy = xs[i], ys[j]
        half *= 0.1
    c_brute = float(_prox_cost(np.array(cx), np.array(cy), a0, b0, tau, params))
    c_prox = float(_prox_cost(np.array(pa), np.array(pb), a0, b0, tau, params))
    # strong convexity turns a cost excess into a distance bound
    return math.sqrt(2 * tau * max(c_prox - c_brute, 0.0))


def projection_error(n: int = 200, samples: int = 10_000, seed: int = 2) -> float:
    """Largest amount by which a random admissible point beats ``project_conjugate``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for params in KERNEL_PARAMS:
        alpha = rng.normal(size=n) * 2
        beta = rng.normal(size=(n, 2)) * 2
        pa, pb = project_conjugate(alpha, beta, params)
        d_proj = np.sqrt((pa - alpha) ** 2 + np.sum((pb - beta) ** 2, axis=-1))
        zb = rng.normal(size=(samples, 2)) * rng.uniform(0, 4, size=(samples, 1))
        za = -hamiltonian(zb, params) - rng.exponential(0.5, size=samples)
        for i in range(n):
            d = np.sqrt((za - alpha[i]) ** 2 + np.sum((zb - beta[i]) ** 2, axis=-1))
            worst = max(worst, float(d_proj[i] - d.min()))
    return max(worst, 0.0)


def adjointness_error(cells=(4, 4)) -> float:
    grid = Grid(tuple(1.5 for _ in cells), cells)
    N, F = grid.size, grid.n_faces
    Gm = np.column_stack([grid.flatten_faces(G.gradient(grid, e.reshape(grid.shape)))
                          for e in np.eye(N)])
    Dm = np.column_stack([G.divergence(grid, grid.unflatten_faces(e)).ravel()
                          for e in np.eye(F)])
    return float(np.max(np.abs(Gm + Dm.T)))


def manufactured_poisson(levels=(8, 16, 32, 64)) -> tuple[list, list]:
    """Errors of the Neumann solve for ``u = cos(pi x) cos(pi y)`` on ``[0, 2]^2``.

    Returns the L2 errors per level and their successive ratios.
    """
    errors = []
    for n in levels:
        grid = Grid((2.0, 2.0), (n, n))
        x, y = grid.centers()
        exact = np.cos(np.pi * x) * np.cos(np.pi * y)
        rhs = 2 * np.pi ** 2 * exact
        rhs = rhs - G.integrate(grid, rhs) / grid.measure
        u = G.neumann_poisson(grid, rhs, mean=float(exact.mean()), tol=1e-13)
        diff = u - exact
        errors.append(math.sqrt(G.inner_cells(grid, diff, diff)))
    ratios = [a / b for a, b in zip(errors, errors[1:])]
    return errors, ratios


@dataclass(frozen=True)
class SuiteResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.tolerance > 0 and self.error <= self.tolerance


def run_suites(tol_scale: float = 1.0) -> list[SuiteResult]:
    """Run every suite; ``tol_scale`` shrinks the tolerances (0 forces failure)."""
    _, ratios = manufactured_poisson()
    ratio_err = max(abs(r - 4.0) for r in ratios)
    return [
        SuiteResult("conjugacy", conjugacy_error(), 1e-8 * tol_scale),
        SuiteResult("moreau", moreau_error(), 1e-6 * tol_scale),
        SuiteResult("projection", projection_error(), 1e-12 * tol_scale),
        SuiteResult("adjointness", adjointness_error(), 1e-13 * tol_scale),
        SuiteResult("poisson_ratio", ratio_err, 0.4 * tol_scale),
    ]

"""Local coupling ``f(x, m) = V(x) + rho sign(m) |m|^theta``.

Also its antiderivative ``F(x, m) = V(x) m + rho |m|^(theta+1)/(theta+1)``,
the conjugate ``F*(x, a) = sup_m a m - F(x, m)`` and the pointwise prox of
``F + indicator[0, 1]`` used by the splitting solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mfgcert.errors import SpecError
from mfgcert.perspective import safeguarded_newton

__all__ = ["Coupling", "POTENTIALS", "potential_from_catalog"]


@dataclass(frozen=True, eq=False)
class Coupling:
    V: np.ndarray
    rho: float = 0.0
    theta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "V", np.asarray(self.V, dtype=float))
        if not self.rho >= 0:
            raise SpecError(f"coupling strength rho must be >= 0, got {self.rho}")
        if not self.theta >= 1:
            raise SpecError(f"coupling exponent theta must be >= 1, got {self.theta}")
        if not np.all(np.isfinite(self.V)):
            raise SpecError("potential V must be finite")

    @property
    def strictly_increasing(self) -> bool:
        """True when ``m`` is unique at the optimum."""
        return self.rho > 0

    def _V(self, x):
        return self.V if x is None else self.V[x]

    # whole-field versions (V broadcast against the argument)
    def f(self, m, x=None):
        m = np.asarray(m, dtype=float)
        return self._V(x) + self.rho * np.sign(m) * np.abs(m) ** self.theta

    def F(self, m, x=None):
        m = np.asarray(m, dtype=float)
        return self._V(x) * m + self.rho * np.abs(m) ** (self.theta + 1) / (self.theta + 1)

    def fstar(self, a, x=None):
        a = np.asarray(a, dtype=float)
        gap = a - self._V(x)
        if self.rho == 0:
            return np.where(gap == 0, 0.0, np.inf)
        if self.theta == 1:
            return gap * gap / (2 * self.rho)
        k = self.theta
        return self.rho ** (-1.0 / k) * (k / (k + 1)) * np.abs(gap) ** ((k + 1) / k)

    def fstar_minimizer(self, x=None):
        """Unconstrained minimiser of ``F*(x, .)``, i.e. ``f(x, 0)``."""
        return self._V(x)

    def prox_box(self, m0, tau, x=None):
        """``argmin_{0 <= m <= 1} (m - m0)^2/(2 tau) + F(x, m)``."""
        if not tau > 0:
            raise ValueError(f"tau must be positive, got {tau}")
        m0 = np.asarray(m0, dtype=float)
        V = np.broadcast_to(self._V(x), m0.shape)
        if self.rho == 0 or self.theta == 1:
            return np.clip((m0 - tau * V) / (1 + tau * self.rho), 0.0, 1.0)
        slope0 = -m0 / tau + V
        slope1 = (1 - m0) / tau + V + self.rho
        out = np.where(slope0 >= 0, 0.0, np.where(slope1 <= 0, 1.0, np.nan))
        inner = np.isnan(out)
        if inner.any():
            a, v = m0[inner], V[inner]
            k, rho = self.theta, self.rho
            root = safeguarded_newton(
                lambda m: (m - a) / tau + v + rho * m ** k,
                lambda m: 1 / tau + rho * k * m ** (k - 1),
                np.zeros_like(a), np.ones_like(a), np.clip(a, 0.0, 1.0),
                scale=np.maximum(1.0, np.abs(a) / tau + np.abs(v)),
            )
            out[inner] = root
        return out

    # pointwise forms indexed by cell
    def f_eval(self, x, m):
        return float(self.f(m, x))

    def F_eval(self, x, m):
        return float(self.F(m, x))

    def fstar_eval(self, x, a):
        return float(self.fstar(a, x))

    def prox_coupling_box(self, m0, x, tau):
        return float(self.prox_box(np.asarray(m0, dtype=float), tau, x))


def _cosine_well(grid, depth=1.0, center=None):
    centers = grid.centers()
    c = [e / 2 for e in grid.extent] if center is None else center
    prof = np.ones(grid.shape)
    for xk, ck, L in zip(centers, c, grid.extent):
        prof = prof * np.cos(np.pi * (xk - ck) / L) ** 2
    return -depth * prof


def _plateau_well(grid, depth=1.0, radius=0.5, width=0.25, center=None):
    centers = grid.centers()
    c = [e / 2 for e in grid.extent] if center is None else center
    dist = np.sqrt(sum((xk - ck) ** 2 for xk, ck in zip(centers, c)))
    ramp = np.clip((dist - radius) / width, 0.0, 1.0)
    return -depth * 0.5 * (1 + np.cos(np.pi * ramp))


def _two_well(grid, depth=1.0, sigma=0.3, separation=None):
    centers = grid.centers()
    L0 = grid.extent[0]
    sep = L0 / 2 if separation is None else separation
    mid = [e / 2 for e in grid.extent]
    out = np.zeros(grid.shape)
    for sign in (-1, 1):
        c = list(mid)
        c[0] = mid[0] + sign * sep / 2
        r2 = sum((xk - ck) ** 2 for xk, ck in zip(centers, c))
        out -= depth * np.exp(-r2 / (2 * sigma ** 2))
    return out


def _constant(grid, value=0.0):
    return np.full(grid.shape, float(value))


POTENTIALS = {
    "constant": _constant,
    "cosine_well": _cosine_well,
    "plateau_well": _plateau_well,
    "two_well": _two_well,
}


def potential_from_catalog(grid, name: str, **params) -> np.ndarray:
    try:
        builder = POTENTIALS[name]
    except KeyError:
        raise SpecError(f"unknown potential {name!r}; choose from {sorted(POTENTIALS)}")
    return builder(grid, **params)

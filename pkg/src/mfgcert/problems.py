"""Reference problems on ``[0, 2]^2`` with ``q = 2, r = 3``."""

from __future__ import annotations

import numpy as np

from mfgcert.coupling import Coupling, potential_from_catalog
from mfgcert.grid import Grid
from mfgcert.perspective import CongestionParams
from mfgcert.solver import ProblemSpec

EXTENT = (2.0, 2.0)


def uniform_problem(cells=(64, 64), eps: float = 1e-3) -> ProblemSpec:
    """``f(x, m) = m``; the optimum is ``m = 1/4`` with ``lambda = -1/4``."""
    grid = Grid(EXTENT, cells)
    return ProblemSpec(grid, CongestionParams(2.0, 3.0, eps),
                       Coupling(np.zeros(grid.shape), 1.0, 1.0))


def well_problem(cells=(64, 64), eps: float = 1e-3, depth: float = 5.0,
                 rho: float = 0.1) -> ProblemSpec:
    """Single cosine well centred in the box."""
    grid = Grid(EXTENT, cells)
    V = potential_from_catalog(grid, "cosine_well", depth=depth)
    return ProblemSpec(grid, CongestionParams(2.0, 3.0, eps), Coupling(V, rho, 1.0))


def deep_well_problem(cells=(64, 64), eps: float = 1e-3) -> ProblemSpec:
    """A well deep enough to saturate ``m = 1`` near its centre."""
    return well_problem(cells, eps, depth=30.0, rho=0.05)

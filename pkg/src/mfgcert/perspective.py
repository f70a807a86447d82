"""Pointwise kernels of the congestion (perspective) functional.

For exponents ``q > 1``, ``r > 1`` and ``eps >= 0`` the running cost of a
velocity ``y`` is ``F(y) = |y|^q/q + eps |y|^r/r`` and the congestion
functional on a density/momentum pair is its perspective

    ell(a, b) = a F(b/a)   (a > 0),   0 at (0, 0),   +inf otherwise.

``ell`` is the support function of the closed convex set
``K = {(alpha, beta) : alpha + H(beta) <= 0}`` where ``H = F*`` is the
Hamiltonian.  Everything here is radial, so the work reduces to scalar
root finding in the velocity magnitude.

Vector arguments carry their components on the **last** axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mfgcert.errors import InfeasiblePoint, NoConvergence, SpecError

__all__ = [
    "CongestionParams",
    "ell",
    "grad_fstar",
    "hamiltonian",
    "project_conjugate",
    "prox_ell",
    "subdiff_element",
    "safeguarded_newton",
]

NEWTON_TOL = 1e-12
NEWTON_MAXITER = 200


@dataclass(frozen=True)
class CongestionParams:
    """Exponents of the congestion cost.

    ``r`` is only used when ``eps > 0``; whether ``q`` (or ``r``) is large
    enough for a given dimension is checked by :meth:`check_dim`.
    """

    q: float
    r: float | None = None
    eps: float = 0.0

    def __post_init__(self):
        if not self.q > 1:
            raise SpecError(f"q must exceed 1, got {self.q}")
        if self.eps < 0 or not math.isfinite(self.eps):
            raise SpecError(f"eps must be a finite nonnegative number, got {self.eps}")
        if self.eps > 0 and (self.r is None or not self.r > 1):
            raise SpecError("eps > 0 requires an exponent r > 1")

    @property
    def q_conj(self) -> float:
        return self.q / (self.q - 1.0)

    @property
    def r_conj(self) -> float | None:
        return None if self.r is None else self.r / (self.r - 1.0)

    @property
    def regularized(self) -> bool:
        return self.eps > 0

    def with_eps(self, eps: float) -> "CongestionParams":
        return CongestionParams(self.q, self.r, eps)

    def check_dim(self, dim: int) -> None:
        """Raise :class:`SpecError` unless the exponents suit dimension ``dim``."""
        if self.eps == 0 and not self.q > dim:
            raise SpecError(
                f"eps = 0 needs q > d (got q={self.q}, d={dim}); for 1 < q <= d "
                "use eps > 0 with r > d"
            )
        if self.eps > 0 and not self.r > dim:
            raise SpecError(f"eps > 0 needs r > d (got r={self.r}, d={dim})")

    # radial profiles, t >= 0
    def F(self, t):
        out = t ** self.q / self.q
        if self.eps:
            out = out + self.eps * t ** self.r / self.r
        return out

    def dF(self, t):
        out = t ** (self.q - 1)
        if self.eps:
            out = out + self.eps * t ** (self.r - 1)
        return out

    def d2F(self, t):
        with np.errstate(divide="ignore"):
            out = (self.q - 1) * t ** (self.q - 2)
            if self.eps:
                out = out + self.eps * (self.r - 1) * t ** (self.r - 2)
        return out

    def G(self, t):
        out = t ** self.q / self.q_conj
        if self.eps:
            out = out + self.eps * t ** self.r / self.r_conj
        return out

    def inv_dF(self, s):
        """Velocity magnitude ``t >= 0`` with ``dF(t) = s``."""
        s = np.asarray(s, dtype=float)
        t_hi = s ** (1.0 / (self.q - 1))
        if not self.eps:
            return t_hi
        t_hi = np.minimum(t_hi, (s / self.eps) ** (1.0 / (self.r - 1)))
        return safeguarded_newton(
            lambda t: self.dF(t) - s,
            self.d2F,
            np.zeros_like(s),
            t_hi,
            t_hi,
            scale=np.maximum(s, 1.0),
        )

    def H_radial(self, s):
        s = np.asarray(s, dtype=float)
        if not self.eps:
            return s ** self.q_conj / self.q_conj
        return self.G(self.inv_dF(s))


def safeguarded_newton(fun, dfun, lo, hi, x0, scale=1.0, tol=NEWTON_TOL,
                       maxiter=NEWTON_MAXITER):
    """Elementwise root of an increasing function bracketed by ``[lo, hi]``.

    Newton steps that leave the current bracket (or are not finite) are
    replaced by bisection.  Requires ``fun(lo) <= 0 <= fun(hi)``.
    """
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    x = np.array(x0, dtype=float)
    scale = np.broadcast_to(np.asarray(scale, dtype=float), x.shape)
    active = np.ones(x.shape, dtype=bool)
    for _ in range(maxiter):
        fx = fun(x)
        done = np.abs(fx) <= tol * scale
        done |= (hi - lo) <= 4 * np.finfo(float).eps * np.maximum(np.abs(x), 1e-300)
        active &= ~done
        if not active.any():
            return _polish(fun, dfun, x, lo, hi)
        hi = np.where(active & (fx > 0), x, hi)
        lo = np.where(active & (fx < 0), x, lo)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = x - fx / dfun(x)
        bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
        step = np.where(bad, 0.5 * (lo + hi), step)
        x = np.where(active, step, x)
    raise NoConvergence(f"safeguarded Newton exceeded {maxiter} iterations")


def _polish(fun, dfun, x, lo, hi):
    # one more Newton step buys the last digits cheaply
    with np.errstate(divide="ignore", invalid="ignore"):
        step = x - fun(x) / dfun(x)
    ok = np.isfinite(step) & (step >= lo) & (step <= hi)
    return np.where(ok, step, x)


def _norm(b):
    return np.sqrt(np.sum(np.square(b), axis=-1))


def _direction(b, nb):
    with np.errstate(divide="ignore", invalid="ignore"):
        unit = b / nb[..., None]
    return np.where(nb[..., None] > 0, unit, 0.0)


def ell(a, b, params: CongestionParams):
    """Perspective ``a F(b/a)`` with the extended-value convention."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    nb = _norm(b)
    pos = a > 0
    safe_a = np.where(pos, a, 1.0)
    val = params.F(nb / safe_a) * safe_a
    out = np.where(pos, val, np.where((a == 0) & (nb == 0), 0.0, np.inf))
    return out[()] if out.ndim == 0 else out


def grad_fstar(z, params: CongestionParams):
    """Gradient of the Hamiltonian: the velocity ``y`` with ``grad F(y) = z``."""
    z = np.asarray(z, dtype=float)
    nz = _norm(z)
    return params.inv_dF(nz)[..., None] * _direction(z, nz)


def hamiltonian(z, params: CongestionParams):
    """``H(z) = sup_y z.y - F(y)``."""
    z = np.asarray(z, dtype=float)
    out = params.H_radial(_norm(z))
    return out[()] if np.ndim(out) == 0 else out


def project_conjugate(alpha, beta, params: CongestionParams):
    """Euclidean projection of ``(alpha, beta)`` onto ``{alpha + H(beta) <= 0}``.

    Boundary points are parametrised by the velocity magnitude ``v`` as
    ``(-G(v), dF(v) beta/|beta|)``; the nearest one solves the increasing
    scalar equation ``dF(v) - |beta| + (alpha + G(v)) v = 0``.
    """
    a0 = np.asarray(alpha, dtype=float)
    b0 = np.asarray(beta, dtype=float)
    s0 = _norm(b0)
    outside = a0 + params.H_radial(s0) > 0
    if not np.any(outside):
        return a0.copy(), b0.copy()

    ao, so = a0[outside], s0[outside]
    qc = params.q_conj
    v_hi = np.maximum(so ** (1.0 / (params.q - 1)),
                      (qc * np.maximum(-ao, 0.0)) ** (1.0 / params.q))

    def psi(v):
        return params.dF(v) - so + (ao + params.G(v)) * v

    def dpsi(v):
        return params.d2F(v) * (1.0 + v * v) + ao + params.G(v)

    v = safeguarded_newton(psi, dpsi, np.zeros_like(so), v_hi, v_hi,
                           scale=1.0 + so + np.abs(ao) * v_hi)
    a = a0.copy()
    b = b0.copy()
    a[outside] = -params.G(v)
    b[outside] = params.dF(v)[..., None] * _direction(b0[outside], so)
    return a, b


def prox_ell(a, b, tau, params: CongestionParams):
    """``argmin ell(x) + |x - (a, b)|^2 / (2 tau)`` via the Moreau identity."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    pa, pb = project_conjugate(a / tau, b / tau, params)
    xa, xb = a - tau * pa, b - tau * pb
    # points of K land on the apex; remove the cancellation noise there
    apex = (a / tau + params.H_radial(_norm(b / tau)) <= 0) | (xa <= 0)
    xa = np.where(apex, 0.0, xa)
    xb = np.where(apex[..., None], 0.0, xb)
    return xa, xb


def subdiff_element(m, w, params: CongestionParams):
    """One element ``(alpha, beta)`` of the subdifferential of ``ell`` at ``(m, w)``.

    For ``m > 0`` this is ``(-G(v), grad F(v))`` with ``v = w/m``; the apex
    ``(0, 0)`` is returned at ``m = w = 0``.
    """
    m = np.asarray(m, dtype=float)
    w = np.asarray(w, dtype=float)
    nw = _norm(w)
    if np.any(m < 0) or np.any((m == 0) & (nw > 0)):
        raise InfeasiblePoint("ell is infinite here: need m > 0, or m = 0 with w = 0")
    pos = m > 0
    safe_m = np.where(pos, m, 1.0)
    speed = np.where(pos, nw / safe_m, 0.0)
    alpha = np.where(pos, -params.G(speed), 0.0)
    beta = params.dF(speed)[..., None] * _direction(w, nw)
    return (alpha[()] if alpha.ndim == 0 else alpha), beta

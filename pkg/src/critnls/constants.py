"""Ground state, sharp Sobolev constant, critical exponents, trapping function.

Everything here is a pure function of the dimension n in {3, 4, 5}.
Exponents use exact rational arithmetic. Constants come from Gauss-Legendre
quadrature of the radial profile after the change of variables r = t/(1-t),
which maps [0, inf) onto [0, 1) with an integrand that stays analytic at
t = 1, so no truncation radius is needed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .errors import DomainError, NumericalError

DIMENSIONS = (3, 4, 5)


def check_dimension(n) -> int:
    if isinstance(n, bool) or int(n) != n or int(n) not in DIMENSIONS:
        raise DomainError(f"dimension must be one of {DIMENSIONS}, got {n!r}", n=n)
    return int(n)


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere in R^n."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


@dataclass(frozen=True)
class Exponents:
    n: int
    sigma: Fraction
    p: Fraction
    gamma: Fraction
    rho: Fraction
    kappa: Fraction

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "sigma": str(self.sigma),
            "p": str(self.p),
            "gamma": str(self.gamma),
            "rho": str(self.rho),
            "kappa": str(self.kappa),
        }


def exponents(n: int) -> Exponents:
    """Critical Strichartz exponents for dimension n, as exact fractions."""
    n = check_dimension(n)
    p = Fraction(2 * (n + 2), n - 2)
    return Exponents(
        n=n,
        sigma=Fraction(2, n - 2),
        p=p,
        gamma=p,
        rho=Fraction(2 * n * (n + 2), n * n + 4),
        kappa=Fraction(n * (n + 2), n - 2),
    )


def q_profile(r, n: int):
    """Ground state Q(r) = (1 + r^2/(n(n-2)))^(-(n-2)/2).

    Accepts a scalar or an array of radii; negative radii are rejected.
    """
    n = check_dimension(n)
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0) or not np.all(np.isfinite(r_arr)):
        raise DomainError("radius must be finite and non-negative")
    out = (1.0 + r_arr**2 / (n * (n - 2))) ** (-(n - 2) / 2)
    return float(out) if out.ndim == 0 else out


def q_profile_derivative(r, n: int):
    """Radial derivative Q'(r) = -(r/n)(1 + r^2/(n(n-2)))^(-n/2)."""
    r_arr = np.asarray(r, dtype=float)
    out = -(r_arr / n) * (1.0 + r_arr**2 / (n * (n - 2))) ** (-n / 2)
    return float(out) if out.ndim == 0 else out


def elliptic_residual(grid, n: int | None = None) -> float:
    """Max-norm residual of Delta_h Q + Q^((n+2)/(n-2)) on a radial grid.

    The exact boundary value Q(R) is used for the ghost node so that the
    residual measures only the interior stencil error.
    """
    if getattr(grid, "kind", None) != "radial":
        raise DomainError("elliptic_residual needs a radial grid")
    n = grid.n if n is None else check_dimension(n)
    if n != grid.n:
        raise DomainError(f"grid dimension {grid.n} differs from n={n}")
    q = q_profile(grid.r, n)
    lap = grid.laplacian(q, boundary_value=q_profile(grid.R, n))
    return float(np.max(np.abs(lap + q ** ((n + 2) / (n - 2)))))


@dataclass(frozen=True)
class QuadratureSpec:
    panels: int = 16
    order: int = 24
    tol: float = 1e-12


@dataclass(frozen=True)
class GroundStateConstants:
    n: int
    c_n: float
    grad_q_sq: float
    h_q: float
    quadrature_error: float
    potential_q: float

    @property
    def grad_q(self) -> float:
        return math.sqrt(self.grad_q_sq)

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "c_n": self.c_n,
            "grad_q_sq": self.grad_q_sq,
            "h_q": self.h_q,
            "quadrature_error": self.quadrature_error,
        }


def _gauss_nodes(panels: int, order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    t = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wt = (half[:, None] * w[None, :]).ravel()
    return t, wt


def _q_integrals(n: int, panels: int, order: int):
    t, wt = _gauss_nodes(panels, order)
    r = t / (1.0 - t)
    jac = 1.0 / (1.0 - t) ** 2
    measure = sphere_area(n) * r ** (n - 1) * jac * wt
    grad = float(np.sum(q_profile_derivative(r, n) ** 2 * measure))
    pot = float(np.sum((1.0 + r**2 / (n * (n - 2))) ** (-n) * measure))
    return grad, pot


def _constants_from(n, grad, pot):
    c_n = pot ** ((n - 2) / (2 * n)) / math.sqrt(grad)
    h_q = 0.5 * grad - (n - 2) / (2 * n) * pot
    return c_n, h_q


def ground_state_constants(n: int, quad: QuadratureSpec | None = None) -> GroundStateConstants:
    """Sharp Sobolev constant and ground-state energies by radial quadrature.

    Values come from the rule with ``2 * panels`` panels; the error estimate
    is the change against the ``panels`` rule, floored at a few ulps of
    accumulated round-off.

    Raises:
        NumericalError: if the estimated relative error exceeds ``quad.tol``.
    """
    n = check_dimension(n)
    quad = quad or QuadratureSpec()
    if quad.panels < 1 or quad.order < 2:
        raise DomainError("quadrature needs panels >= 1 and order >= 2")
    return _ground_state_cached(n, quad.panels, quad.order, quad.tol)


@lru_cache(maxsize=None)
def _ground_state_cached(n, panels, order, tol):
    coarse = _constants_from(n, *_q_integrals(n, panels, order))
    grad, pot = _q_integrals(n, 2 * panels, order)
    c_n, h_q = _constants_from(n, grad, pot)
    err = float(max(abs(c_n - coarse[0]), 64 * np.finfo(float).eps * c_n))
    if not err / c_n <= tol:
        raise NumericalError(
            "ground-state quadrature did not converge",
            n=n, panels=panels, order=order, estimate=err, c_n=c_n,
        )
    return GroundStateConstants(n=n, c_n=c_n, grad_q_sq=grad, h_q=h_q,
                                quadrature_error=err, potential_q=pot)


def trapping_f(x, n: int, c_n: float | None = None):
    """f(x) = x/2 - ((n-2)/(2n)) C_n^(2n/(n-2)) x^(n/(n-2))."""
    n = check_dimension(n)
    if c_n is None:
        c_n = ground_state_constants(n).c_n
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr < 0):
        raise DomainError("trapping_f needs x >= 0")
    out = 0.5 * x_arr - (n - 2) / (2 * n) * c_n ** (2 * n / (n - 2)) * x_arr ** (n / (n - 2))
    return float(out) if out.ndim == 0 else out


class TrappingRegion(str, enum.Enum):
    TRAPPED_BELOW = "trapped_below"
    ABOVE_THRESHOLD = "above_threshold"
    INDETERMINATE = "indeterminate"


def trapping_predicate(h0: float, g0: float, n: int) -> TrappingRegion:
    """Classify initial data by energy h0 and gradient norm g0 = ||grad u0||."""
    if not (math.isfinite(h0) and math.isfinite(g0)):
        raise DomainError("h0 and g0 must be finite")
    gs = ground_state_constants(n)
    if h0 < gs.h_q and g0 < gs.grad_q:
        return TrappingRegion.TRAPPED_BELOW
    if h0 < gs.h_q and g0 > gs.grad_q:
        return TrappingRegion.ABOVE_THRESHOLD
    return TrappingRegion.INDETERMINATE

"""Monitored quantities and residuals of the evolution identities.

Conventions: i u_t = Laplacian u + lam |u|^(4/(n-2)) u, lam = +1 focusing.

    M = ||u||^2,  H = ||grad u||^2 / 2 - lam (n-2)/(2n) ||u||_{2n/(n-2)}^{2n/(n-2)},
    V = int |x|^2 |u|^2,  G = Im int u x.grad(conj u),
    dV/dt = 4 G,  d^2V/dt^2 = 16n/(n-2) H - 16/(n-2) ||grad u||^2.

The stochastic identities are tracked by :class:`IdentityAccumulator`. Each
identity is split as X(t) = X(0) + drift + martingale + correction, where
the martingale is a left-endpoint sum over the applied noise increments and
the correction is the quadratic-variation term. Two versions of the
correction are kept: ``realized`` uses the squared increments actually
applied on the path, ``expected`` uses dt times the mean (the constants
C_sigma, C1, C2 and the density integrals). Both converge to the same limit;
the realized one removes the O(sqrt(dt)) fluctuation of the sum of squares
around its mean.

The virial drift integrand is evaluated as the exact rate of change of the
discrete G under the semi-discrete deterministic flow. It agrees with
4n/(n-2) H - 4/(n-2) ||grad u||^2 up to the O(h^2) consistency error of the
grid, which would otherwise put a resolution floor under any dt study. The
residual with the formula integrand is reported as ``virial_residual_formula``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, UnsupportedOperation


def mass(u, grid) -> float:
    return grid.integrate(np.abs(u) ** 2)


def potential(u, grid) -> float:
    n = grid.n
    return grid.integrate(np.abs(u) ** (2 * n / (n - 2)))


def grad_norm(u, grid) -> float:
    return math.sqrt(grid.kinetic(u))


def energy(u, grid, lam: float = 1.0) -> float:
    n = grid.n
    return 0.5 * grid.kinetic(u) - lam * (n - 2) / (2 * n) * potential(u, grid)


def variance(u, grid) -> float:
    return grid.integrate(grid.radius_sq * np.abs(u) ** 2)


def virial_g(u, grid) -> float:
    return grid.virial_form(u, u)


def sup_amp(u) -> float:
    return float(np.max(np.abs(u))) if np.size(u) else 0.0


ROW_FIELDS = ("t", "mass", "energy", "grad_norm", "variance", "virial_g", "sup_amp", "dt")


def diagnostics_row(u, grid, lam: float, t: float, dt: float = 0.0) -> dict:
    kin = grid.kinetic(u)
    n = grid.n
    return {
        "t": float(t),
        "mass": mass(u, grid),
        "energy": 0.5 * kin - lam * (n - 2) / (2 * n) * potential(u, grid),
        "grad_norm": math.sqrt(kin),
        "variance": variance(u, grid),
        "virial_g": virial_g(u, grid),
        "sup_amp": sup_amp(u),
        "dt": float(dt),
    }


def virial_rhs(row: dict, n: int) -> float:
    """16n/(n-2) H - 16/(n-2) ||grad u||^2."""
    return 16 * n / (n - 2) * row["energy"] - 16 / (n - 2) * row["grad_norm"] ** 2


def deterministic_virial_residuals(trajectory, n: int, rtol: float = 1e-9):
    """Max residuals (r1, r2) of the two deterministic virial identities.

    Derivatives of V are centred second-order differences on the recording
    grid, evaluated at interior records.

    Raises:
        UnsupportedOperation: if the records are not uniformly spaced or
            fewer than three are available.
    """
    t = np.array([row["t"] for row in trajectory])
    if t.size < 3:
        raise UnsupportedOperation("need at least three records")
    steps = np.diff(t)
    d = float(steps.mean())
    if np.max(np.abs(steps - d)) > rtol * max(d, 1.0) + 1e-12:
        raise UnsupportedOperation("deterministic residuals need uniform recording")
    v = np.array([row["variance"] for row in trajectory])
    g = np.array([row["virial_g"] for row in trajectory])
    rhs = np.array([virial_rhs(row, n) for row in trajectory])
    dv = (v[2:] - v[:-2]) / (2 * d)
    d2v = (v[2:] - 2 * v[1:-1] + v[:-2]) / d**2
    r1 = float(np.max(np.abs(dv - 4 * g[1:-1])))
    r2 = float(np.max(np.abs(d2v - rhs[1:-1])))
    return r1, r2


def mixed_norm(times, fields, grid, exps, which: str = "S") -> float:
    """Space-time norms by trapezoid quadrature in t.

    ``which="S"`` gives ||u||_{L^gamma_t L^p_x}; ``which="W"`` gives
    ||grad u||_{L^gamma_t L^rho_x}.
    """
    gam = float(exps.gamma)
    times = np.asarray(times, dtype=float)
    if which == "S":
        p = float(exps.p)
        vals = [grid.integrate(np.abs(u) ** p) ** (1 / p) for u in fields]
    elif which == "W":
        rho = float(exps.rho)
        vals = [grid.grad_lp(u, rho) for u in fields]
    else:
        raise ValueError("which must be 'S' or 'W'")
    vals = np.asarray(vals, dtype=float)
    if times.size < 2:
        return 0.0
    return float(np.trapezoid(vals**gam, times)) ** (1 / gam)


# ------------------------------------------------------------ stochastic identities

def _crit_power(u, n):
    return np.abs(u) ** (4 / (n - 2))


def _re_sq_weight(u, n):
    """|u|^(2(4-n)/(n-2)), taken as 0 where u = 0 (singular for n = 5)."""
    a = np.abs(u)
    out = np.zeros_like(a)
    nz = a > 0
    out[nz] = a[nz] ** (2 * (4 - n) / (n - 2))
    return out


class IdentityAccumulator:
    """Running tallies for the energy, variance and virial identities.

    Drift integrals use the trapezoid rule on step endpoints; stochastic sums
    are evaluated at the state immediately before the noise substep, which is
    the left endpoint of the noise increment inside the splitting.
    """

    NAMES = ("energy", "variance", "virial")

    def __init__(self, grid, op, noise_kind: str, lam: float, u0):
        self.grid, self.op, self.noise_kind, self.lam = grid, op, noise_kind, float(lam)
        n = grid.n
        self.n = n
        row = diagnostics_row(u0, grid, lam, 0.0)
        self.initial = {"energy": row["energy"], "variance": row["variance"], "virial": row["virial_g"]}
        self._last_rhs = self._drift_rates(u0, row)
        zero = {k: 0.0 for k in self.NAMES + ("virial_formula",)}
        self.drift = dict(zero)
        self.martingale = dict(zero)
        self.realized = dict(zero)
        self.expected = dict(zero)
        self.t = 0.0
        self.steps = 0
        if op is not None and noise_kind != "none":
            self._prepare(op)

    def _prepare(self, op):
        grid = self.grid
        modes = op.modes
        if self.noise_kind == "additive":
            # the applied increment is i dW; its driver family is i * psi_j
            drivers = 1j * op.drivers()
            self._sum_kin = sum(grid.kinetic(d) for d in drivers)
            self._sum_var = sum(grid.integrate(grid.radius_sq * np.abs(d) ** 2) for d in drivers)
            self._sum_vir = sum(grid.virial_form(d, d) for d in drivers)
            self._f_phi = np.sum(np.abs(modes) ** 2, axis=0)
        else:
            if op.grads.ndim == modes.ndim:
                self._f1 = np.sum(op.grads**2, axis=0)
            else:
                self._f1 = np.sum(op.grads**2, axis=(0, 1))

    def virial_rate(self, u) -> float:
        """d/dt of the discrete G along i u_t = Laplacian_h u + lam |u|^(4/(n-2)) u."""
        grid = self.grid
        ut = -1j * (grid.laplacian(u) + self.lam * _crit_power(u, self.n) * u)
        return grid.virial_form(ut, u) + grid.virial_form(u, ut)

    def _drift_rates(self, u, row):
        n = self.n
        return {
            "energy": 0.0,
            "variance": 4 * row["virial_g"],
            "virial": self.virial_rate(u),
            "virial_formula": 4 * n / (n - 2) * row["energy"] - 4 / (n - 2) * row["grad_norm"] ** 2,
        }

    def advance_drift(self, u, row, dt):
        rates = self._drift_rates(u, row)
        for k in self.drift:
            self.drift[k] += 0.5 * dt * (self._last_rhs[k] + rates[k])
        self._last_rhs = rates
        self.t += dt
        self.steps += 1

    def add_additive(self, u, delta, dt):
        """Tally the additive increment u -> u + delta at state u."""
        grid, n, lam = self.grid, self.n, self.lam
        cp = _crit_power(u, n)
        re = np.real(np.conj(u) * delta)
        self.martingale["variance"] += 2 * grid.integrate(grid.radius_sq * re)
        self.martingale["virial"] += grid.virial_form(u, delta) + grid.virial_form(delta, u)
        self.martingale["energy"] += (grid.grad_inner(u, delta).real
                                      - lam * grid.integrate(cp * re))
        self.realized["variance"] += grid.integrate(grid.radius_sq * np.abs(delta) ** 2)
        self.realized["virial"] += grid.virial_form(delta, delta)
        self.realized["energy"] += 0.5 * grid.kinetic(delta) - 0.5 * lam * grid.integrate(
            cp * np.abs(delta) ** 2 + 4 / (n - 2) * _re_sq_weight(u, n) * re**2)
        # expected version: sum over the driver family, times dt
        if self.op.is_real:
            re_sq_mean = np.imag(u) ** 2 * self._f_phi
        else:
            re_sq_mean = 0.5 * np.abs(u) ** 2 * self._f_phi
        self.expected["variance"] += dt * self._sum_var
        self.expected["virial"] += dt * self._sum_vir
        self.expected["energy"] += dt * (0.5 * self._sum_kin - 0.5 * lam * grid.integrate(
            cp * self._f_phi + 4 / (n - 2) * _re_sq_weight(u, n) * re_sq_mean))

    def add_multiplicative(self, u, w, dt):
        """Tally the phase increment u -> u exp(-i w) at state u."""
        dh1, dh2, dg1, dg2 = self.grid.phase_terms(u, w)
        self.martingale["energy"] += dh1
        self.martingale["virial"] += dg1
        self.realized["energy"] += dh2
        self.realized["virial"] += dg2
        self.expected["energy"] += 0.5 * dt * self.grid.integrate(np.abs(u) ** 2 * self._f1)

    def residuals(self, u) -> dict:
        """Current residual of each identity, for both correction versions."""
        row = diagnostics_row(u, self.grid, self.lam, self.t)
        now = {"energy": row["energy"], "variance": row["variance"], "virial": row["virial_g"]}
        out = {"t": self.t}
        for k in self.NAMES:
            base = self.initial[k] + self.drift[k] + self.martingale[k]
            out[f"{k}_residual"] = now[k] - base - self.realized[k]
            out[f"{k}_residual_expected"] = now[k] - base - self.expected[k]
        out["virial_residual_formula"] = (now["virial"] - self.initial["virial"] - self.drift["virial_formula"]
                                          - self.martingale["virial"] - self.realized["virial"])
        return out


def stochastic_identity_residuals(state) -> dict:
    """Residual set of the stochastic identities for a simulation state.

    Raises:
        ContractError: if the state was created without accumulators.
    """
    acc = getattr(state, "accumulators", None)
    if acc is None:
        raise ContractError("accumulators were not enabled for this run")
    return acc.residuals(state.u)

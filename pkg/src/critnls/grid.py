"""Spatial discretizations: a radial finite-volume grid and a periodic box.

Both grids expose the same small set of discrete operators, so the solver
and diagnostics never branch on geometry. Fields are plain complex numpy
arrays shaped like ``grid.shape``.

Radial grid layout: cell-centred nodes r_j = (j + 1/2) h, j = 0..N-1, with a
Dirichlet ghost node at r_N = R (so h = R / (N + 1/2)). Cell j spans
[j h, (j+1) h]; its weight is the exact shell volume. The Laplacian is the
flux difference across cell faces divided by the cell volume, which makes
the discrete -Laplacian symmetric and positive in the weighted inner product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .constants import check_dimension, sphere_area
from .errors import ConfigError, NumericalError


@dataclass(frozen=True)
class RadialGrid:
    n: int
    R: float
    N: int
    kind: str = field(default="radial", init=False)

    def __post_init__(self):
        check_dimension(self.n)
        if self.N < 16:
            raise ConfigError("radial grid needs N >= 16", N=self.N)
        if not self.R > 0:
            raise ConfigError("radial grid needs R > 0", R=self.R)
        n, N = self.n, self.N
        h = self.R / (N + 0.5)
        j = np.arange(N, dtype=float)
        omega = sphere_area(n)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "r", (j + 0.5) * h)
        object.__setattr__(self, "r_face", (j + 1.0) * h)
        object.__setattr__(self, "weights", omega * h**n * ((j + 1) ** n - j**n) / n)
        object.__setattr__(self, "face_coef", omega * ((j + 1.0) * h) ** (n - 1) / h)
        object.__setattr__(self, "virial_coef", omega * ((j + 1.0) * h) ** n)

    @property
    def shape(self):
        return (self.N,)

    @property
    def radius_sq(self):
        return self.r**2

    @property
    def radius(self):
        return self.r

    def describe(self) -> dict:
        return {"kind": "radial", "n": self.n, "R": self.R, "N": self.N, "h": self.h}

    def integrate(self, f) -> float:
        return float(np.sum(self.weights * f))

    def _diff(self, u, boundary_value=0.0):
        # forward differences across faces; the last face touches the ghost node
        ext = np.empty(self.N + 1, dtype=np.result_type(u, float))
        ext[:-1] = u
        ext[-1] = boundary_value
        return ext[1:] - ext[:-1]

    def apply_stiffness(self, u, boundary_value=0.0):
        """(A u)_j = a_j (u_{j+1} - u_j) - a_{j-1} (u_j - u_{j-1})."""
        flux = self.face_coef * self._diff(u, boundary_value)
        out = flux.copy()
        out[1:] -= flux[:-1]
        return out

    def laplacian(self, u, boundary_value=0.0):
        return self.apply_stiffness(u, boundary_value) / self.weights

    def kinetic(self, u) -> float:
        """Discrete ||grad u||^2."""
        return float(np.sum(self.face_coef * np.abs(self._diff(u)) ** 2))

    def grad_inner(self, u, v) -> complex:
        """Discrete <grad u, grad v> (conjugate-linear in u)."""
        return complex(np.sum(self.face_coef * np.conj(self._diff(u)) * self._diff(v)))

    def grad_lp(self, u, p: float) -> float:
        """(int |grad u|^p)^(1/p) with face-centred differences."""
        mag = np.abs(self._diff(u)) / self.h
        return float(np.sum(self.face_coef * self.h**2 * mag**p)) ** (1.0 / p)

    def virial_form(self, u, v) -> float:
        """Bilinear form with virial_form(u, u) = G(u) = Im int u x.grad(conj u)."""
        ext_u = np.append(u, 0.0)
        return float(np.sum(self.virial_coef * np.imag(np.conj(ext_u[1:]) * v)))

    def phase_terms(self, u, w):
        """Expansion of H and G under u -> u exp(-i w) for real w.

        Returns (dH_linear, dH_quadratic, dG_linear, dG_quadratic), the first
        and second order terms in w of the exact discrete increments.
        """
        z = np.conj(np.append(u[1:], 0.0)) * u
        theta = np.append(w[1:], w[-1]) - w
        a, c = self.face_coef, self.virial_coef
        return (
            float(np.sum(a * theta * z.imag)),
            0.5 * float(np.sum(a * theta**2 * z.real)),
            float(np.sum(c * theta * z.real)),
            -0.5 * float(np.sum(c * theta**2 * z.imag)),
        )

    def propagate(self, u, dt: float):
        """Crank-Nicolson step of i u_t = Laplacian u (Cayley form, unitary)."""
        if dt == 0:
            return np.array(u, dtype=complex)
        a = self.face_coef
        diag = -a.copy()
        diag[1:] -= a[:-1]
        c = 0.5j * dt
        ab = np.zeros((3, self.N), dtype=complex)
        ab[0, 1:] = c * a[:-1]
        ab[1] = self.weights + c * diag
        ab[2, :-1] = c * a[:-1]
        rhs = self.weights * u - c * self.apply_stiffness(u)
        try:
            out = solve_banded((1, 1), ab, rhs, check_finite=False)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise NumericalError(f"Crank-Nicolson solve failed: {exc}") from exc
        return out

    def boundary_mass_fraction(self, u) -> float:
        dens = self.weights * np.abs(u) ** 2
        total = float(np.sum(dens))
        if total == 0:
            return 0.0
        return float(np.sum(dens[self.r > 0.9 * self.R])) / total


def _good_fft_size(N: int) -> bool:
    m = N
    for p in (2, 3, 5, 7):
        while m % p == 0:
            m //= p
    return m == 1


@dataclass(frozen=True)
class PeriodicBox:
    n: int
    L: float
    N: int
    kind: str = field(default="periodic_box", init=False)

    def __post_init__(self):
        if self.n != 3:
            # the energy-critical equation needs n >= 3 and full grids stop at 3
            raise ConfigError("periodic box supports n = 3 only", n=self.n)
        if self.N < 16 or not _good_fft_size(self.N):
            raise ConfigError("periodic box needs N >= 16 with small prime factors", N=self.N)
        if not self.L > 0:
            raise ConfigError("periodic box needs L > 0", L=self.L)
        n, N, L = self.n, self.N, self.L
        h = L / N
        x1 = -0.5 * L + h * np.arange(N)
        k1 = 2 * math.pi * np.fft.fftfreq(N, d=h)
        axes = np.ix_(*([x1] * n))
        kaxes = np.ix_(*([k1] * n))
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "x", [np.broadcast_to(a, (N,) * n) for a in axes])
        object.__setattr__(self, "k", list(kaxes))
        object.__setattr__(self, "k_sq", sum(k**2 for k in kaxes))
        object.__setattr__(self, "cell", h**n)

    @property
    def shape(self):
        return (self.N,) * self.n

    @property
    def radius_sq(self):
        return sum(x**2 for x in self.x)

    @property
    def radius(self):
        return np.sqrt(self.radius_sq)

    @property
    def weights(self):
        return self.cell

    def describe(self) -> dict:
        return {"kind": "periodic_box", "n": self.n, "L": self.L, "N": self.N, "h": self.h}

    def integrate(self, f) -> float:
        return float(self.cell * np.sum(f))

    def gradient(self, u):
        uh = np.fft.fftn(u)
        return [np.fft.ifftn(1j * k * uh) for k in self.k]

    def laplacian(self, u):
        return np.fft.ifftn(-self.k_sq * np.fft.fftn(u))

    def kinetic(self, u) -> float:
        uh = np.fft.fftn(u)
        # Parseval: sum |grad u|^2 dx = cell / N^n * sum |k|^2 |u_hat|^2
        return float(self.cell * np.sum(self.k_sq * np.abs(uh) ** 2) / u.size)

    def grad_lp(self, u, p: float) -> float:
        mag = np.sqrt(sum(np.abs(g) ** 2 for g in self.gradient(u)))
        return float(self.cell * np.sum(mag**p)) ** (1.0 / p)

    def grad_inner(self, u, v) -> complex:
        uh, vh = np.fft.fftn(u), np.fft.fftn(v)
        return complex(self.cell * np.sum(self.k_sq * np.conj(uh) * vh) / u.size)

    def virial_form(self, u, v) -> float:
        gu = self.gradient(u)
        s = sum(x * np.conj(g) for x, g in zip(self.x, gu))
        return float(self.cell * np.sum(np.imag(v * s)))

    def phase_terms(self, u, w):
        gu = self.gradient(u)
        gw = [np.real(g) for g in self.gradient(w)]
        dens = np.abs(u) ** 2
        dh_lin = -float(self.cell * np.sum(sum(np.imag(np.conj(u) * a) * b for a, b in zip(gu, gw))))
        dh_quad = 0.5 * float(self.cell * np.sum(dens * sum(b**2 for b in gw)))
        dg_lin = float(self.cell * np.sum(dens * sum(x * b for x, b in zip(self.x, gw))))
        return dh_lin, dh_quad, dg_lin, 0.0

    def propagate(self, u, dt: float):
        """Exact free flow: u_hat -> exp(+i |k|^2 dt) u_hat, i.e. S(dt) = exp(-i dt Laplacian)."""
        if dt == 0:
            return np.array(u, dtype=complex)
        return np.fft.ifftn(np.exp(1j * self.k_sq * dt) * np.fft.fftn(u))

    def boundary_mass_fraction(self, u) -> float:
        dens = np.abs(u) ** 2
        total = float(np.sum(dens))
        if total == 0:
            return 0.0
        edge = np.zeros(self.shape, dtype=bool)
        for x in self.x:
            edge |= np.abs(x) > 0.45 * self.L
        return float(np.sum(dens[edge])) / total


def make_grid(spec: dict, n: int):
    kind = spec.get("kind", "radial")
    if kind == "radial":
        return RadialGrid(n=n, R=float(spec["R"]), N=int(spec["N"]))
    if kind == "periodic_box":
        return PeriodicBox(n=n, L=float(spec["L"]), N=int(spec["N"]))
    raise ConfigError(f"unknown grid kind {kind!r}")

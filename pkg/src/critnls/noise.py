"""Q-Wiener noise: mode families, derived constants, reproducible increments.

The driving process is W(t) = sum_k beta_k(t) m_k with m_k = phi e_k. Three
mode families are provided:

* ``sine_radial``: Dirichlet eigenfunctions of the radial Laplacian on the
  ball of radius R, N_k r^-nu J_nu(j_{nu,k} r / R) with nu = (n-2)/2. For
  n = 3 these are the familiar sin(k pi r / R) / r. Orthonormal in the
  radial L^2 inner product; scaled by epsilon * k^-q.
* ``fourier_periodic``: real cosine/sine modes on the box, ordered by |k|,
  scaled by epsilon * (1 + |k|^2)^(-q/2).
* ``kernel``: m_k(x) = K(x, z_k) sqrt(w_k) for quadrature nodes z_k, so the
  covariance sum reproduces c(x, y) = int K(x, z) K(y, z) dz.

Increments are drawn from counter-based Philox streams keyed by
(seed, path, step), so any step of any path can be regenerated in isolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special
from scipy.optimize import brentq

from .errors import ConfigError, ContractError, UnsupportedOperation

BASIS_KINDS = ("sine_radial", "fourier_periodic", "kernel")
COMPLEXNESS = ("complex_valued", "real_valued")


@dataclass(frozen=True)
class NoiseSpec:
    basis: str = "sine_radial"
    K: int = 32
    decay_q: float = 2.0
    epsilon: float = 0.0
    complexness: str = "complex_valued"
    kernel_length: float = 1.0
    kernel_extent: float | None = None

    def as_dict(self) -> dict:
        return {
            "basis": self.basis, "K": self.K, "decay_q": self.decay_q,
            "epsilon": self.epsilon, "complexness": self.complexness,
            "kernel_length": self.kernel_length, "kernel_extent": self.kernel_extent,
        }


@dataclass(frozen=True)
class NoiseOperator:
    """Finite family of spatial modes sampled on a grid.

    ``grads`` holds analytic gradients: radial derivative for radial grids
    (shape (K, N)), one component per axis for boxes (shape (K, n, ...)).
    """

    basis_kind: str
    complexness: str
    K: int
    amplitude: float
    modes: np.ndarray
    grads: np.ndarray
    grid: object = field(repr=False)
    kernel: Callable | None = field(default=None, repr=False)
    kernel_nodes: np.ndarray | None = field(default=None, repr=False)
    kernel_weights: np.ndarray | None = field(default=None, repr=False)

    @property
    def is_real(self) -> bool:
        return self.complexness == "real_valued"

    def scaled(self, lam: float) -> "NoiseOperator":
        kern = self.kernel
        if kern is not None:
            kern = (lambda k, s: (lambda x, z: s * k(x, z)))(kern, lam)
        return NoiseOperator(self.basis_kind, self.complexness, self.K, self.amplitude * lam,
                             self.modes * lam, self.grads * lam, self.grid, kern,
                             self.kernel_nodes, self.kernel_weights)

    def field_from(self, coeffs) -> np.ndarray:
        """sum_k coeffs_k m_k."""
        return np.tensordot(coeffs, self.modes, axes=(0, 0))

    def drivers(self):
        """Real-Brownian driver family psi_j equivalent in law to the noise.

        Complex coefficients with independent real and imaginary parts of
        variance 1/2 correspond to the family {m_k/sqrt2, i m_k/sqrt2}.
        """
        if self.is_real:
            return self.modes.astype(complex)
        s = 1.0 / math.sqrt(2.0)
        return np.concatenate([self.modes * s, 1j * self.modes * s]).astype(complex)


# ---------------------------------------------------------------- bases

def bessel_zeros(nu: float, count: int) -> np.ndarray:
    """First ``count`` positive zeros of J_nu."""
    if float(nu).is_integer():
        return special.jn_zeros(int(nu), count)
    zeros = []
    step = 0.1
    x0 = step
    f0 = special.jv(nu, x0)
    while len(zeros) < count:
        x1 = x0 + step
        f1 = special.jv(nu, x1)
        if f0 == 0.0:
            zeros.append(x0)
        elif f0 * f1 < 0:
            zeros.append(brentq(lambda x: special.jv(nu, x), x0, x1, xtol=1e-15, rtol=1e-15))
        x0, f0 = x1, f1
    return np.array(zeros[:count])


def _sine_radial(grid, K, q):
    n, r, R = grid.n, grid.r, grid.R
    nu = (n - 2) / 2
    zeros = bessel_zeros(nu, K)
    modes = np.empty((K, grid.N))
    grads = np.empty((K, grid.N))
    for i, j in enumerate(zeros):
        norm = 1.0 / math.sqrt(grid.omega * R**2 / 2 * special.jv(nu + 1, j) ** 2)
        kap = j / R
        modes[i] = norm * r**-nu * special.jv(nu, kap * r)
        grads[i] = -norm * kap * r**-nu * special.jv(nu + 1, kap * r)
    scale = np.arange(1, K + 1, dtype=float) ** -q
    return modes * scale[:, None], grads * scale[:, None]


def _fourier_wavevectors(n, N, K):
    # half-space representatives of integer wavevectors, ordered by |k|
    m = 0
    while (2 * m + 1) ** n < 2 * K + 1:
        m += 1
    m = min(m + 1, N // 2 - 1)
    rng = range(-m, m + 1)
    vecs = np.array(np.meshgrid(*([list(rng)] * n), indexing="ij")).reshape(n, -1).T
    keep = []
    for v in vecs:
        nz = np.nonzero(v)[0]
        if len(nz) == 0 or v[nz[0]] > 0:
            keep.append(tuple(v))
    keep.sort(key=lambda v: (sum(c * c for c in v), v))
    family = []
    for v in keep:
        if all(c == 0 for c in v):
            family.append((v, "const"))
        else:
            family.extend([(v, "cos"), (v, "sin")])
        if len(family) >= K:
            break
    if len(family) < K:
        raise ConfigError("box too coarse for the requested number of Fourier modes", K=K)
    return family[:K]


def _fourier_periodic(grid, K, q):
    n, L = grid.n, grid.L
    vol = L**n
    modes = np.empty((K,) + grid.shape)
    grads = np.empty((K, n) + grid.shape)
    for i, (v, kind) in enumerate(_fourier_wavevectors(n, grid.N, K)):
        kv = [2 * math.pi * c / L for c in v]
        phase = sum(k * x for k, x in zip(kv, grid.x)) + np.zeros(grid.shape)
        amp = (1.0 + sum(k * k for k in kv)) ** (-q / 2)
        if kind == "const":
            modes[i] = amp / math.sqrt(vol)
            grads[i] = 0.0
        elif kind == "cos":
            c = amp * math.sqrt(2 / vol)
            modes[i] = c * np.cos(phase)
            for d in range(n):
                grads[i, d] = -c * kv[d] * np.sin(phase)
        else:
            c = amp * math.sqrt(2 / vol)
            modes[i] = c * np.sin(phase)
            for d in range(n):
                grads[i, d] = c * kv[d] * np.cos(phase)
    return modes, grads


def gaussian_kernel(length: float):
    """K(x, z) = exp(-|x - z|^2 / (2 length^2)) with its x-gradient factor."""
    def kern(dist_sq):
        return np.exp(-dist_sq / (2 * length**2))
    return kern


def _kernel_modes(grid, K, spec: NoiseSpec, kernel=None, kernel_grad=None):
    """Kernel modes on a K-node quadrature of the source variable z."""
    ell = spec.kernel_length
    if getattr(grid, "kind", None) == "radial":
        extent = spec.kernel_extent or grid.R
        hz = extent / K
        z = (np.arange(K) + 0.5) * hz
        wz = grid.omega * hz**grid.n * ((np.arange(K) + 1.0) ** grid.n - np.arange(K) ** grid.n) / grid.n
        if kernel is None:
            def kernel(x, zz):
                return np.exp(-((x - zz) ** 2) / (2 * ell**2))

            def kernel_grad(x, zz):
                return -(x - zz) / ell**2 * np.exp(-((x - zz) ** 2) / (2 * ell**2))
        modes = np.stack([kernel(grid.r, zk) * math.sqrt(wk) for zk, wk in zip(z, wz)])
        if kernel_grad is not None:
            grads = np.stack([kernel_grad(grid.r, zk) * math.sqrt(wk) for zk, wk in zip(z, wz)])
        else:
            grads = np.gradient(modes, grid.r, axis=1)
        return modes, grads, kernel, z, wz
    # periodic box: nodes on a sub-lattice, minimum-image distance
    n, L = grid.n, grid.L
    per_axis = max(1, round(K ** (1.0 / n)))
    if per_axis**n != K:
        raise ConfigError("kernel basis on a box needs K = m^n", K=K, n=n)
    z1 = -0.5 * L + (np.arange(per_axis) + 0.5) * L / per_axis
    z = np.array(np.meshgrid(*([z1] * n), indexing="ij")).reshape(n, -1).T
    wz = np.full(K, (L / per_axis) ** n)

    def wrap(d):
        return (d + 0.5 * L) % L - 0.5 * L

    if kernel is None:
        def kernel(x, zz):
            d2 = sum(wrap(xi - zi) ** 2 for xi, zi in zip(x, zz))
            return np.exp(-d2 / (2 * ell**2))

        def kernel_grad(x, zz):
            base = kernel(x, zz)
            return [-(wrap(xi - zi)) / ell**2 * base for xi, zi in zip(x, zz)]
    modes = np.stack([kernel(grid.x, zk) * math.sqrt(wk) + np.zeros(grid.shape) for zk, wk in zip(z, wz)])
    if kernel_grad is not None:
        grads = np.stack([np.stack([g + np.zeros(grid.shape) for g in kernel_grad(grid.x, zk)]) * math.sqrt(wk)
                          for zk, wk in zip(z, wz)])
    else:
        grads = np.stack([np.stack([np.real(g) for g in grid.gradient(m)]) for m in modes])
    return modes, grads, kernel, z, wz


def build_operator(spec: NoiseSpec, grid, kernel=None, kernel_grad=None) -> NoiseOperator:
    """Construct the mode family described by ``spec`` on ``grid``.

    A custom kernel K(x, z) (and optionally its x-gradient) may be passed for
    the kernel basis; otherwise a Gaussian of width ``spec.kernel_length``.

    Raises:
        ConfigError: for an unknown basis, K < 1, negative epsilon, or a
            decay exponent too weak for a finite H^1 Hilbert-Schmidt norm.
    """
    if spec.basis not in BASIS_KINDS:
        raise ConfigError(f"unknown noise basis {spec.basis!r}")
    if spec.complexness not in COMPLEXNESS:
        raise ConfigError(f"unknown complexness {spec.complexness!r}")
    if int(spec.K) < 1:
        raise ConfigError("noise needs K >= 1", K=spec.K)
    if not spec.epsilon >= 0:
        raise ConfigError("noise amplitude must be >= 0", epsilon=spec.epsilon)
    K, q = int(spec.K), float(spec.decay_q)
    knodes = kweights = None
    if spec.basis == "sine_radial":
        if grid.kind != "radial":
            raise ConfigError("sine_radial basis needs a radial grid")
        # ||grad e_k||^2 grows like k^2, so sum k^(2-2q) must converge
        if q <= 1.5:
            raise ConfigError("sine_radial decay needs q > 3/2 for a finite H^1 norm", decay_q=q)
        modes, grads = _sine_radial(grid, K, q)
    elif spec.basis == "fourier_periodic":
        if grid.kind != "periodic_box":
            raise ConfigError("fourier_periodic basis needs a periodic box")
        if q <= 1 + grid.n / 2:
            raise ConfigError("fourier decay needs q > 1 + n/2 for a finite H^1 norm", decay_q=q)
        modes, grads = _fourier_periodic(grid, K, q)
    else:
        if not spec.kernel_length > 0:
            raise ConfigError("kernel_length must be > 0")
        modes, grads, kernel, knodes, kweights = _kernel_modes(grid, K, spec, kernel, kernel_grad)
    eps = float(spec.epsilon)
    modes = np.ascontiguousarray(modes * eps)
    grads = np.ascontiguousarray(grads * eps)
    if kernel is not None:
        kernel = (lambda k: (lambda x, z: eps * k(x, z)))(kernel)
    return NoiseOperator(spec.basis, spec.complexness, K, eps, modes, grads, grid,
                         kernel, knodes, kweights)


# ---------------------------------------------------------------- constants

@dataclass(frozen=True)
class NoiseConstants:
    hs_norm_0: float
    hs_norm_1: float
    c_phi_sigma: float
    c_of_phi: float
    c_phi_1: float
    c_phi_2: float
    m_phi: float
    f_phi: np.ndarray = field(repr=False)
    f1_phi: np.ndarray = field(repr=False)

    def as_dict(self, fields: bool = False) -> dict:
        out = {k: getattr(self, k) for k in
               ("hs_norm_0", "hs_norm_1", "c_phi_sigma", "c_of_phi", "c_phi_1", "c_phi_2", "m_phi")}
        if fields:
            out["f_phi"] = self.f_phi.tolist()
            out["f1_phi"] = self.f1_phi.tolist()
        return out


def _grad_sq(op):
    grid = op.grid
    if grid.kind == "radial":
        return np.abs(op.grads) ** 2
    return np.sum(np.abs(op.grads) ** 2, axis=1)


def _x_dot_grad(op):
    grid = op.grid
    if grid.kind == "radial":
        return grid.r * op.grads
    return sum(x * op.grads[:, d] for d, x in enumerate(grid.x))


def noise_constants(op: NoiseOperator, grid=None) -> NoiseConstants:
    """Quadratures of every noise constant the thresholds consume."""
    grid = grid or op.grid
    n = grid.n
    w = grid.weights
    axes = tuple(range(1, op.modes.ndim))
    mode_sq = np.abs(op.modes) ** 2
    grad_sq = _grad_sq(op)
    l2 = np.sum(w * mode_sq, axis=axes)
    h1 = np.sum(w * grad_sq, axis=axes)
    crit = 2 * n / (n - 2)
    lcrit = np.sum(w * np.abs(op.modes) ** crit, axis=axes) ** (2 / crit)
    c2 = np.imag(np.sum(w * op.modes * np.conj(_x_dot_grad(op)), axis=axes))
    f1 = np.sum(grad_sq, axis=0)
    return NoiseConstants(
        hs_norm_0=math.sqrt(float(np.sum(l2))),
        hs_norm_1=math.sqrt(float(np.sum(l2 + h1))),
        c_phi_sigma=float(np.sum(np.sum(w * grid.radius_sq * mode_sq, axis=axes))),
        c_of_phi=float(np.sum(lcrit)),
        c_phi_1=float(np.sum(h1)),
        c_phi_2=float(np.sum(c2)),
        m_phi=float(np.max(f1)) if f1.size else 0.0,
        f_phi=np.sum(mode_sq, axis=0),
        f1_phi=f1,
    )


def correlation(op: NoiseOperator, x, y) -> float:
    """c(x, y) = int K(x, z) K(y, z) dz by the operator's z-quadrature.

    Raises:
        UnsupportedOperation: for operators that are not kernel-based.
    """
    if op.basis_kind != "kernel" or op.kernel is None:
        raise UnsupportedOperation("correlation is defined for kernel operators only")
    total = 0.0
    for zk, wk in zip(op.kernel_nodes, op.kernel_weights):
        total += float(np.real(op.kernel(x, zk) * op.kernel(y, zk))) * wk
    return total


# ---------------------------------------------------------------- sampling

def stream(seed: int, path: int = 0, step: int = 0) -> np.random.Generator:
    """Counter-based generator for one (seed, path, step) cell."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(path), int(step)])))


def standard_coefficients(op: NoiseOperator, rng: np.random.Generator) -> np.ndarray:
    """K independent standard normals, real or complex with Var(Re) = Var(Im) = 1/2."""
    if op.is_real:
        return rng.standard_normal(op.K)
    z = rng.standard_normal((2, op.K))
    return (z[0] + 1j * z[1]) / math.sqrt(2.0)


def sample_increment(op: NoiseOperator, dt: float, rng: np.random.Generator) -> np.ndarray:
    """Delta W = sqrt(dt) sum_k xi_k m_k."""
    if not dt > 0:
        raise ContractError("sample_increment needs dt > 0", dt=dt)
    return op.field_from(math.sqrt(dt) * standard_coefficients(op, rng))


class StreamSource:
    """Fresh increments per step index, keyed by (seed, path, step)."""

    def __init__(self, op: NoiseOperator, seed: int, path: int = 0):
        self.op, self.seed, self.path = op, int(seed), int(path)

    def coefficients(self, step: int, dt: float) -> np.ndarray:
        return math.sqrt(dt) * standard_coefficients(self.op, stream(self.seed, self.path, step))


class FrozenPath:
    """One Brownian path on a fine uniform grid, reusable at coarser steps.

    A step of size ``b * dt_fine`` starting at fine index ``i`` receives the
    sum of the fine increments i..i+b-1, so runs at different dt see the same
    realization of W.
    """

    def __init__(self, op: NoiseOperator, seed: int, dt_fine: float, n_fine: int, path: int = 0):
        self.op, self.dt_fine, self.n_fine = op, float(dt_fine), int(n_fine)
        raw = np.stack([standard_coefficients(op, stream(seed, path, s)) for s in range(self.n_fine)])
        self._cum = np.concatenate([np.zeros((1, op.K), dtype=raw.dtype), np.cumsum(raw, axis=0)])
        self._cum *= math.sqrt(self.dt_fine)
        self._t_index = 0

    def block(self, start: int, stop: int) -> np.ndarray:
        if not 0 <= start <= stop <= self.n_fine:
            raise ContractError("frozen path exhausted", start=start, stop=stop, n_fine=self.n_fine)
        return self._cum[stop] - self._cum[start]

    def coefficients_at(self, t: float, dt: float) -> np.ndarray:
        start = round(t / self.dt_fine)
        b = round(dt / self.dt_fine)
        if b < 1 or abs(b * self.dt_fine - dt) > 1e-9 * dt or abs(start * self.dt_fine - t) > 1e-9 * max(dt, 1.0):
            raise ContractError("step not aligned with the frozen path", t=t, dt=dt, dt_fine=self.dt_fine)
        return self.block(start, start + b)

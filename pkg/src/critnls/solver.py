"""Split-step integrator for the energy-critical stochastic NLS.

One step is the Strang composition

    L(dt/2) -> N(dt) -> noise(dt) -> L(dt/2)

with L the free flow, N the exact pointwise flow of i u_t = lam |u|^(4/(n-2)) u,
and the noise substep either u + i dW (additive) or u exp(-i dW), the exact
Stratonovich flow of i du = u o dW for real dW (multiplicative).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import diagnostics as diag
from .constants import ground_state_constants, q_profile
from .errors import ConfigError, ContractError, NumericalError
from .noise import FrozenPath, StreamSource

NOISE_KINDS = ("none", "additive", "multiplicative_stratonovich")


class Status(str, enum.Enum):
    RUNNING = "running"
    BLOWN_UP = "blown_up"
    COMPLETED = "completed"


@dataclass(frozen=True)
class Detector:
    gamma: float = 50.0
    amp_max: float = math.inf

    def fires(self, grad: float, amp: float, grad0: float) -> str | None:
        if not (math.isfinite(grad) and math.isfinite(amp)):
            return "non_finite"
        if grad0 > 0 and grad >= self.gamma * grad0:
            return "gradient"
        if amp >= self.amp_max:
            return "amplitude"
        return None


@dataclass(frozen=True)
class DtPolicy:
    """Step-size policy.

    dt = dt0 * min(1, (G0/||grad u||)^2) * min(1, (A0/|u|_inf)^(4/(n-2))),
    floored at dt_min. The amplitude factor follows the time scale of the
    nonlinear rotation, which is what shrinks during energy-critical
    collapse while the gradient norm may stay nearly constant.
    """

    dt0: float = 1e-3
    dt_min: float = 1e-9
    adaptive: bool = True
    amplitude_control: bool = True

    def next_dt(self, grad, amp, grad0, amp0, n) -> float:
        if not self.adaptive:
            return self.dt0
        fac = 1.0
        if grad > 0 and grad0 > 0:
            fac = min(fac, (grad0 / grad) ** 2)
        if self.amplitude_control and amp > 0 and amp0 > 0:
            fac = min(fac, (amp0 / amp) ** (4 / (n - 2)))
        return max(self.dt_min, self.dt0 * fac)


@dataclass
class SimState:
    t: float
    u: np.ndarray
    grid: object
    lam: float = 1.0
    noise_kind: str = "none"
    op: object = None
    source: object = None
    accumulators: object = None
    status: Status = Status.RUNNING
    t_blowup: float | None = None
    blowup_reason: str | None = None
    step_index: int = 0
    grad0: float = field(default=0.0)
    amp0: float = field(default=0.0)
    grad: float = field(default=math.nan)
    amp: float = field(default=math.nan)

    def __post_init__(self):
        if self.noise_kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.noise_kind!r}")
        if self.lam not in (1, -1, 1.0, -1.0):
            raise ConfigError("lambda must be +1 or -1", lam=self.lam)
        if self.noise_kind == "multiplicative_stratonovich" and self.op is not None and not self.op.is_real:
            raise ConfigError("multiplicative noise needs a real_valued operator")
        if self.grad0 == 0.0:
            self.grad0 = diag.grad_norm(self.u, self.grid)
        if self.amp0 == 0.0:
            self.amp0 = diag.sup_amp(self.u)
        if math.isnan(self.grad) and self.step_index == 0:
            self.grad, self.amp = self.grad0, self.amp0


def new_state(u0, grid, lam=1.0, noise_kind="none", op=None, source=None,
              accumulators=False) -> SimState:
    u0 = np.array(u0, dtype=complex)
    if u0.shape != grid.shape:
        raise ConfigError("initial field shape does not match the grid", shape=u0.shape)
    acc = diag.IdentityAccumulator(grid, op, noise_kind, lam, u0) if accumulators else None
    if noise_kind != "none" and (op is None or source is None):
        raise ConfigError("noisy runs need an operator and a noise source")
    return SimState(t=0.0, u=u0, grid=grid, lam=float(lam), noise_kind=noise_kind, op=op,
                    source=source, accumulators=acc)


# ---------------------------------------------------------------- substeps

def linear_step(u, dt, grid):
    return grid.propagate(u, dt)


def nonlinear_step(u, dt, lam, n):
    if dt == 0:
        return np.array(u, dtype=complex)
    return u * np.exp(-1j * lam * dt * np.abs(u) ** (4 / (n - 2)))


def additive_noise_step(u, dW):
    return u + 1j * dW


def multiplicative_noise_step(u, dW):
    dW = np.asarray(dW)
    if np.iscomplexobj(dW):
        if np.any(dW.imag != 0):
            raise ContractError("multiplicative noise increment must be real")
        dW = dW.real
    return u * np.exp(-1j * dW)


def _coefficients(state, dt):
    src = state.source
    if isinstance(src, FrozenPath):
        return src.coefficients_at(state.t, dt)
    if isinstance(src, StreamSource):
        return src.coefficients(state.step_index, dt)
    return src(state, dt)


def step(state: SimState, dt: float, detector: Detector | None = None) -> SimState:
    """Advance one Strang step; returns a new state."""
    if state.status is not Status.RUNNING:
        raise ContractError("step called on a finished state", status=state.status.value)
    if dt == 0:
        return replace(state)
    grid, n = state.grid, state.grid.n
    u = linear_step(state.u, 0.5 * dt, grid)
    u = nonlinear_step(u, dt, state.lam, n)
    acc = state.accumulators
    if state.noise_kind != "none":
        dW = state.op.field_from(_coefficients(state, dt))
        if state.noise_kind == "additive":
            delta = 1j * dW
            if acc is not None:
                acc.add_additive(u, delta, dt)
            u = u + delta
        else:
            if acc is not None:
                acc.add_multiplicative(u, np.real(dW), dt)
            u = multiplicative_noise_step(u, np.real(dW))
    u = linear_step(u, 0.5 * dt, grid)
    finite = bool(np.all(np.isfinite(u)))
    grad = diag.grad_norm(u, grid) if finite else math.nan
    amp = diag.sup_amp(u) if finite else math.nan
    new = replace(state, u=u, t=state.t + dt, step_index=state.step_index + 1, grad=grad, amp=amp)
    if acc is not None and finite:
        acc.advance_drift(u, diag.diagnostics_row(u, grid, state.lam, new.t, dt), dt)
    detector = detector or Detector()
    reason = detector.fires(grad, amp, state.grad0)
    if reason is not None:
        new.status = Status.BLOWN_UP
        new.t_blowup = new.t
        new.blowup_reason = reason
    return new


def run(state: SimState, T_max: float, policy: DtPolicy | None = None,
        detector: Detector | None = None, record_interval: float | None = None,
        keep_fields: bool = False, max_steps: int = 10**8, monitor=None):
    """Step until T_max or until the detector fires.

    Records a diagnostics row at t = 0, at every multiple of
    ``record_interval`` (steps are shortened to land on record times) and at
    the final time. Returns ``(state, rows)``; with ``keep_fields`` the rows
    carry a copy of the field under the key ``"u"``.

    ``monitor(state, row)``, if given, is called after every accepted step.
    """
    if not T_max >= 0:
        raise ConfigError("T_max must be >= 0")
    policy = policy or DtPolicy()
    detector = detector or Detector()
    grid, n = state.grid, state.grid.n
    if isinstance(state.source, FrozenPath) and policy.adaptive:
        raise ConfigError("frozen noise paths need a fixed time step")

    def record(s, dt):
        row = diag.diagnostics_row(s.u, grid, s.lam, s.t, dt)
        if keep_fields:
            row["u"] = s.u.copy()
        return row

    rows = [record(state, 0.0)]
    if T_max == 0:
        state.status = Status.COMPLETED
        return state, rows
    next_rec = record_interval if record_interval else None
    eps_t = 1e-12 * max(1.0, T_max)
    steps = 0
    while state.status is Status.RUNNING:
        if state.t >= T_max - eps_t:
            state.status = Status.COMPLETED
            break
        dt = policy.next_dt(state.grad, state.amp, state.grad0, state.amp0, n)
        target = T_max if next_rec is None else min(next_rec, T_max)
        hit = False
        if state.t + dt >= target - eps_t:
            dt = target - state.t
            hit = True
        state = step(state, dt, detector)
        steps += 1
        finite = state.status is Status.RUNNING or state.blowup_reason != "non_finite"
        if monitor is not None and finite:
            monitor(state, None)
        if hit and next_rec is not None and abs(state.t - next_rec) <= eps_t:
            state.t = float(T_max) if abs(next_rec - T_max) <= eps_t else next_rec
            if state.status is Status.RUNNING or finite:
                rows.append(record(state, dt))
            next_rec = next_rec + record_interval
            # avoid drift in the record grid
            next_rec = round(next_rec / record_interval) * record_interval
        elif record_interval is None and finite:
            rows.append(record(state, dt))
        elif state.status is not Status.RUNNING and finite:
            rows.append(record(state, dt))
        if steps >= max_steps:
            raise NumericalError("step budget exhausted", steps=steps, t=state.t)
    if hit and abs(state.t - T_max) <= eps_t:
        state.t = float(T_max)
        if abs(rows[-1]["t"] - state.t) > eps_t:
            rows.append(record(state, 0.0))
    return state, rows


# ---------------------------------------------------------------- initial data

def _smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.clip(s, 0.0, 1.0)
    a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


def q_cutoff(r, radius, width):
    """Smooth cutoff equal to 1 for r <= radius - width and 0 for r >= radius."""
    return _smooth_step((radius - r) / width)


def make_initial(spec: dict, grid) -> np.ndarray:
    """Deterministic initial field from a spec dictionary.

    Kinds:
      ``{"kind": "gaussian", "amplitude": A, "width": w, "chirp": b}``
          A exp(-|x|^2 / w^2) exp(i b |x|^2 / 4).
      ``{"kind": "scaled_Q", "alpha": a, "cutoff": Rc, "cutoff_width": l,
         "match_gradient": bool}``
          a Q chi with a smooth cutoff chi supported in |x| < Rc. With
          ``match_gradient`` the profile is rescaled so that
          ||grad u0|| = a ||grad Q|| on this grid.
      ``{"kind": "custom", "values": [...]} `` real samples or [re, im] pairs.
    """
    kind = spec.get("kind")
    n = grid.n
    r = grid.radius
    if kind == "gaussian":
        amp = float(spec.get("amplitude", 1.0))
        width = float(spec.get("width", 1.0))
        if not width > 0:
            raise ConfigError("gaussian width must be > 0")
        chirp = float(spec.get("chirp", 0.0))
        u = amp * np.exp(-(r**2) / width**2) * np.exp(1j * chirp * r**2 / 4)
        return np.asarray(u, dtype=complex)
    if kind == "scaled_Q":
        alpha = float(spec.get("alpha", 1.0))
        limit = grid.R if grid.kind == "radial" else 0.5 * grid.L
        rc = spec.get("cutoff")
        rc = float(limit if rc is None else rc)
        if rc > limit or not rc > 0:
            raise ConfigError("cutoff radius must lie inside the grid", cutoff=rc, limit=limit)
        width = float(spec.get("cutoff_width", 0.5 * rc))
        if not 0 < width <= rc:
            raise ConfigError("cutoff_width must be in (0, cutoff]")
        base = q_profile(np.asarray(r), n) * q_cutoff(np.asarray(r), rc, width)
        if spec.get("match_gradient", False):
            base = base * ground_state_constants(n).grad_q / diag.grad_norm(base, grid)
        return np.asarray(alpha * base, dtype=complex)
    if kind == "custom":
        vals = np.asarray(spec.get("values"), dtype=float)
        if vals.shape == grid.shape + (2,):
            u = vals[..., 0] + 1j * vals[..., 1]
        elif vals.shape == grid.shape:
            u = vals.astype(complex)
        else:
            raise ConfigError("custom initial values do not match the grid shape")
        if not np.all(np.isfinite(u)):
            raise ConfigError("custom initial values must be finite")
        return u
    raise ConfigError(f"unknown initial kind {kind!r}")

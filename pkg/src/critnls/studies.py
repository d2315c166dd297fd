"""Time-step convergence studies of the evolution identities."""

from __future__ import annotations

import math

from . import diagnostics as diag
from .config import Experiment
from .errors import ConfigError
from .noise import FrozenPath
from .solver import DtPolicy, Status, new_state, run


def _ratios(values):
    return [a / b if b > 0 else math.inf for a, b in zip(values, values[1:])]


def deterministic_virial_study(exp: Experiment, dts, T: float) -> dict:
    """Max residuals of dV/dt = 4G and of the second-derivative identity per dt.

    Rows are recorded every 2 dt, so T must be a multiple of 2 dt for every
    dt in the list.
    """
    table = {"virial_first": [], "virial_second": []}
    for dt in dts:
        if abs(T / (2 * dt) - round(T / (2 * dt))) > 1e-9:
            raise ConfigError("T must be a multiple of 2 dt", T=T, dt=dt)
        state = new_state(exp.u0, exp.grid, exp.lam, "none")
        state, rows = run(state, T, DtPolicy(dt0=dt, adaptive=False), exp.detector, record_interval=2 * dt)
        r1, r2 = diag.deterministic_virial_residuals(rows, exp.n)
        table["virial_first"].append({"dt": dt, "residual": r1})
        table["virial_second"].append({"dt": dt, "residual": r2})
    return _finish(table)


def stochastic_identity_study(exp: Experiment, dts, T: float, seed: int = 0, variant: str = "realized") -> dict:
    """Max-over-steps residuals of the noisy energy, variance and virial identities.

    Every dt sees the same Brownian path, frozen on the finest step. The
    ``variant`` selects the quadratic-variation correction: ``realized``
    (squared applied increments) or ``expected`` (dt times its mean).
    """
    if exp.noise_kind == "none":
        raise ConfigError("stochastic identity study needs a noisy experiment")
    if variant not in ("realized", "expected"):
        raise ConfigError(f"unknown correction variant {variant!r}")
    dts = sorted(dts, reverse=True)
    fine = dts[-1]
    n_fine = int(round(T / fine))
    path = FrozenPath(exp.op, seed, fine, n_fine)
    suffix = "" if variant == "realized" else "_expected"
    names = {"energy": f"energy_residual{suffix}", "variance": f"variance_residual{suffix}",
             "virial": f"virial_residual{suffix}"}
    table = {k: [] for k in names}
    status = []
    for dt in dts:
        state = new_state(exp.u0, exp.grid, exp.lam, exp.noise_kind, exp.op, path, accumulators=True)
        worst = dict.fromkeys(names, 0.0)

        def monitor(s, _row):
            res = diag.stochastic_identity_residuals(s)
            for k, key in names.items():
                worst[k] = max(worst[k], abs(res[key]))

        state, _ = run(state, T, DtPolicy(dt0=dt, adaptive=False), exp.detector, None, monitor=monitor)
        status.append(state.status.value)
        for k in names:
            table[k].append({"dt": dt, "residual": worst[k]})
    out = _finish(table)
    out["variant"] = variant
    out["blown_up"] = any(s == Status.BLOWN_UP.value for s in status)
    return out


def _finish(table: dict) -> dict:
    ratios = {k: _ratios([e["residual"] for e in v]) for k, v in table.items()}
    return {"table": table, "ratios": ratios}


def identity_study(exp: Experiment) -> dict:
    block = exp.config["identities"]
    dts, T = [float(d) for d in block["dts"]], float(block["T"])
    if exp.noise_kind == "none" or exp.noise_spec.epsilon == 0:
        out = deterministic_virial_study(exp, dts, T)
        out["kind"] = "deterministic"
    else:
        out = stochastic_identity_study(exp, dts, T, int(block["seed"]))
        out["kind"] = exp.noise_kind
    out["T"] = T
    return out

"""Monte Carlo ensembles over independent noise paths.

Path ``i`` draws every increment from the stream keyed by (seed, i, step),
so any single path can be recomputed in isolation and the aggregate does not
depend on worker count or scheduling. The blow-up time of the continuum
equation is not observable; "blown up" always means "the detector fired"
for the configured (Gamma, amp_max).
"""

from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from . import diagnostics as diag
from .config import Experiment, thread_count
from .constants import ground_state_constants
from .errors import ConfigError, CritNLSError, DomainError, NumericalError
from .noise import StreamSource, noise_constants
from .solver import Status, run
from .thresholds import (ThresholdInputs, markov_bound_additive,
                         markov_bound_multiplicative, threshold_report)


# ---------------------------------------------------------------- statistics

def wilson_interval(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for k successes out of n."""
    if n < 1 or not 0 <= k <= n:
        raise DomainError("need 0 <= k <= n and n >= 1", k=k, n=n)
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


def bootstrap_mean(values, n_resamples: int = 1000, seed: int = 0, confidence: float = 0.95):
    """Percentile bootstrap of the mean; returns (low, high, resampled means)."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise DomainError("bootstrap needs at least one value")
    if np.all(x == x[0]):
        return float(x[0]), float(x[0]), np.full(n_resamples, float(x[0]))
    res = stats.bootstrap((x,), np.mean, n_resamples=n_resamples, confidence_level=confidence,
                          method="percentile", random_state=np.random.default_rng(seed))
    return float(res.confidence_interval.low), float(res.confidence_interval.high), res.bootstrap_distribution


# ---------------------------------------------------------------- paths

@dataclass
class PathRecord:
    path: int
    blown_up: bool
    failed: bool
    t_end: float
    t_fire: float | None
    reason: str | None
    sup_energy: float
    sup_grad: float
    steps: int
    mass0: float
    energy0: float
    grad0: float
    variance0: float
    virial0: float
    final: dict = field(default_factory=dict)
    rows: list | None = None

    def as_dict(self, rows: bool = False) -> dict:
        out = asdict(self)
        if not rows:
            out.pop("rows")
        return out


def run_path(config: dict, path: int, seed: int | None = None, horizon: float | None = None,
             keep_rows: bool = False) -> PathRecord:
    """Simulate one path of the experiment described by a resolved config."""
    exp = Experiment(config)
    seed = exp.seed if seed is None else int(seed)
    T = exp.T_max if horizon is None else float(horizon)
    grid, lam = exp.grid, exp.lam
    if exp.noise_kind == "none":
        state = exp.new_state()
    else:
        state = exp.new_state(path=path, source=StreamSource(exp.op, seed, path))
    row0 = diag.diagnostics_row(state.u, grid, lam, 0.0)
    track = {"H": row0["energy"], "grad": row0["grad_norm"], "t": 0.0}

    def monitor(s, _row):
        track["t"] = s.t
        if np.all(np.isfinite(s.u)):
            track["H"] = max(track["H"], diag.energy(s.u, grid, lam))
            track["grad"] = max(track["grad"], s.grad)

    failed = False
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            state, rows = run(state, T, exp.policy, exp.detector, exp.record_interval,
                              max_steps=int(exp.config["run"]["max_steps"]), monitor=monitor)
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError):
        # budget or solver failure: counted as blown up at the failure time
        failed = True
        rows = []
    blown = failed or state.status is Status.BLOWN_UP
    if state.blowup_reason == "non_finite":
        failed = True
    final = {k: v for k, v in (rows[-1] if rows else row0).items() if k != "u"}
    t_end = (track["t"] if failed and not rows else float(state.t)) if blown else T
    return PathRecord(
        path=int(path), blown_up=bool(blown), failed=failed, t_end=t_end,
        t_fire=t_end if blown else None,
        reason="numerical_failure" if failed and state.blowup_reason is None else state.blowup_reason,
        sup_energy=float(track["H"]), sup_grad=float(track["grad"]), steps=int(state.step_index),
        mass0=row0["mass"], energy0=row0["energy"], grad0=row0["grad_norm"],
        variance0=row0["variance"], virial0=row0["virial_g"], final=final,
        rows=rows if keep_rows else None,
    )


def _run_path_args(args):
    return run_path(*args)


# ---------------------------------------------------------------- ensembles

@dataclass
class EnsembleConfig:
    """An experiment plus the Monte Carlo settings.

    ``delta_energy`` is the level delta of the event sup H >= delta H(Q);
    ``None`` disables that event.
    """

    experiment: Experiment
    paths: int = 100
    seed: int = 0
    horizon: float | None = None
    delta_energy: float | None = None
    workers: int | None = None
    keep_rows: bool = False

    def __post_init__(self):
        if self.paths < 1:
            raise ConfigError("ensemble needs at least one path", paths=self.paths)
        if self.delta_energy is not None and not self.delta_energy > 0:
            raise ConfigError("delta_energy must be > 0")

    @property
    def T(self) -> float:
        return self.experiment.T_max if self.horizon is None else float(self.horizon)

    @classmethod
    def from_experiment(cls, exp: Experiment, **overrides) -> "EnsembleConfig":
        e = exp.config["ensemble"]
        kw = dict(paths=e["paths"], seed=e["seed"], horizon=e["horizon"],
                  delta_energy=e["delta_energy"], workers=e["workers"],
                  keep_rows=exp.config["output"]["per_path"])
        kw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(exp, **kw)


@dataclass
class EnsembleResult:
    records: list
    aggregates: dict
    settings: dict

    def as_dict(self, per_path: bool = True) -> dict:
        out = {"settings": self.settings, "aggregates": self.aggregates}
        if per_path:
            out["paths"] = [r.as_dict() for r in self.records]
        return out

    def to_json(self, per_path: bool = True) -> str:
        """Canonical JSON: a pure function of config and seed."""
        return json.dumps(self.as_dict(per_path), sort_keys=True, indent=1, allow_nan=True) + "\n"


def _degenerate(exp: Experiment) -> bool:
    return exp.noise_kind == "none" or exp.noise_spec.epsilon == 0.0


def _aggregate(records, T: float, delta_energy: float | None, n: int) -> dict:
    P = len(records)
    k_blow = sum(r.blown_up for r in records)
    lo, hi = wilson_interval(k_blow, P)
    agg = {
        "n_paths": P,
        "blowup": {"count": k_blow, "p_hat": k_blow / P, "ci_lo": lo, "ci_hi": hi},
        "survival": {"count": P - k_blow, "p_hat": (P - k_blow) / P, "ci_lo": 1 - hi, "ci_hi": 1 - lo},
        "failed": sum(r.failed for r in records),
        "e_t_tau_sq": float(np.mean([r.t_end**2 for r in records])),
        "e_sup_energy": float(np.mean([r.sup_energy for r in records])),
        "e_sup_grad": float(np.mean([r.sup_grad for r in records])),
    }
    if delta_energy is not None:
        level = delta_energy * ground_state_constants(n).h_q
        k = sum(r.sup_energy >= level for r in records)
        lo, hi = wilson_interval(k, P)
        agg["energy_excursion"] = {"delta": delta_energy, "level": level, "count": k,
                                   "p_hat": k / P, "ci_lo": lo, "ci_hi": hi}
    return agg


def run_ensemble(cfg: EnsembleConfig, runner=None) -> EnsembleResult:
    """Simulate ``cfg.paths`` independent paths and aggregate.

    ``runner(path) -> PathRecord`` replaces the solver when given (used for
    synthetic Bernoulli checks of the interval machinery). With zero noise
    every path is the same deterministic run, which is simulated once.
    """
    exp = cfg.experiment
    config = exp.config
    T = cfg.T
    indices = range(cfg.paths)
    if runner is not None:
        records = [runner(i) for i in indices]
    elif _degenerate(exp):
        base = run_path(config, 0, cfg.seed, T, cfg.keep_rows)
        records = [PathRecord(**{**base.__dict__, "path": i}) for i in indices]
    else:
        workers = thread_count(cfg.workers)
        args = [(config, i, cfg.seed, T, cfg.keep_rows) for i in indices]
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                records = list(pool.map(_run_path_args, args, chunksize=max(1, cfg.paths // (4 * workers))))
        else:
            records = [run_path(*a) for a in args]
    records.sort(key=lambda r: r.path)
    settings = {"paths": cfg.paths, "seed": cfg.seed, "horizon": T, "delta_energy": cfg.delta_energy,
                "detector": {"Gamma": exp.detector.gamma,
                             "amp_max": None if math.isinf(exp.detector.amp_max) else exp.detector.amp_max},
                "epsilon": exp.noise_spec.epsilon, "noise_kind": exp.noise_kind,
                "degenerate": runner is None and _degenerate(exp)}
    return EnsembleResult(records, _aggregate(records, T, cfg.delta_energy, exp.n), settings)


def energy_excursion_stats(cfg: EnsembleConfig, delta: float | None = None,
                           result: EnsembleResult | None = None, n_boot: int = 1000) -> dict:
    """Empirical P(sup_{s <= T ^ tau} H >= delta H(Q)) next to its analytic bound.

    The bound is the Markov-inequality chain for the noise kind, evaluated
    with beta = H(u0) / H(Q) and the operator's constants. ``consistent`` is
    the check empirical <= bound + margin, where the margin is the distance
    from the estimate to the lower end of its bootstrap interval.
    """
    exp = cfg.experiment
    delta = cfg.delta_energy if delta is None else float(delta)
    if delta is None:
        raise ConfigError("energy excursion needs delta")
    gs = ground_state_constants(exp.n)
    h0 = diag.energy(exp.u0, exp.grid, exp.lam)
    beta = max(h0, 0.0) / gs.h_q
    if not delta > beta:
        raise DomainError("delta must exceed beta = H(u0) / H(Q)", delta=delta, beta=beta)
    if result is None or result.settings.get("delta_energy") != delta:
        result = run_ensemble(EnsembleConfig(exp, cfg.paths, cfg.seed, cfg.horizon, delta, cfg.workers))
    T = cfg.T
    level = delta * gs.h_q
    hits = np.array([r.sup_energy >= level for r in result.records], dtype=float)
    sup_h = np.array([r.sup_energy for r in result.records])
    if exp.noise_kind == "none" or exp.noise_spec.epsilon == 0:
        bound = beta / delta
    else:
        nc = noise_constants(exp.op)
        if exp.noise_kind == "additive":
            bound = markov_bound_additive(exp.n, beta, delta, nc.hs_norm_1, T)
        else:
            bound = markov_bound_multiplicative(exp.n, beta, delta, nc.m_phi, diag.mass(exp.u0, exp.grid), T)
    p_hat = float(hits.mean())
    b_lo, b_hi, dist = bootstrap_mean(hits, n_boot, seed=cfg.seed)
    w_lo, w_hi = wilson_interval(int(hits.sum()), hits.size)
    margin = p_hat - b_lo
    return {
        "delta": delta, "beta": beta, "T": T, "level": level,
        "p_hat": p_hat, "bootstrap_ci": [b_lo, b_hi], "wilson_ci": [w_lo, w_hi],
        "e_sup_energy": float(sup_h.mean()),
        "analytic_bound": float(bound),
        "margin": margin,
        "consistent": bool(p_hat <= bound + margin),
        "bootstrap_fraction_below_bound": float(np.mean(np.asarray(dist) <= bound)),
        "n_paths": int(hits.size),
    }


def export_stats_for_thresholds(result: EnsembleResult) -> dict:
    """Ensemble moments in the shape the threshold report consumes."""
    recs = result.records
    m = np.array([r.mass0 for r in recs])
    return {
        "e_mass": float(m.mean()),
        "e_mass_sq": float(np.mean(m**2)),
        "e_variance": float(np.mean([r.variance0 for r in recs])),
        "e_virial_sq": float(np.mean([r.virial0**2 for r in recs])),
        "e_t_tau_sq": float(np.mean([r.t_end**2 for r in recs])),
        "T": result.settings["horizon"],
        "n_paths": len(recs),
    }


def threshold_inputs(exp: Experiment, ensemble_stats: dict | None = None) -> ThresholdInputs:
    """ThresholdInputs from an experiment, optionally with ensemble moments."""
    th = exp.config["thresholds"]
    grid, u0 = exp.grid, exp.u0
    m0 = diag.mass(u0, grid)
    kw = dict(n=exp.n, beta0=th["beta0"], delta=th["delta"], t=th["t"], epsilon=th["epsilon"],
              e_mass=m0, e_mass_sq=m0**2, e_variance=diag.variance(u0, grid),
              e_virial_sq=diag.virial_g(u0, grid) ** 2, h0=diag.energy(u0, grid, exp.lam),
              grad_cap=th["grad_cap"], N=th["N"])
    if exp.noise_kind != "none":
        kw.update(noise_constants(exp.op).as_dict())
    if ensemble_stats:
        for key in ("e_mass", "e_mass_sq", "e_variance", "e_virial_sq", "e_t_tau_sq"):
            if ensemble_stats.get(key) is not None:
                kw[key] = float(ensemble_stats[key])
    return ThresholdInputs(**kw)


def above_threshold(exp: Experiment) -> dict:
    """H(u0) < H(Q), ||grad u0|| > ||grad Q|| and finite variance."""
    gs = ground_state_constants(exp.n)
    h0 = diag.energy(exp.u0, exp.grid, exp.lam)
    g0 = diag.grad_norm(exp.u0, exp.grid)
    v0 = diag.variance(exp.u0, exp.grid)
    return {"h0_over_hq": h0 / gs.h_q, "grad0_over_gradq": g0 / gs.grad_q,
            "finite_variance": bool(math.isfinite(v0)),
            "ok": bool(h0 < gs.h_q and g0 > gs.grad_q and math.isfinite(v0))}


def blowup_probability_sweep(cfg: EnsembleConfig, epsilons) -> dict:
    """Blow-up frequency before the horizon for each noise amplitude.

    All amplitudes share the seed, so row differences come from epsilon and
    not from resampling. Data that is not above threshold only triggers a
    warning.
    """
    exp = cfg.experiment
    check = above_threshold(exp)
    if not check["ok"]:
        warnings.warn("initial data is not above the blow-up threshold", stacklevel=2)
    rows = []
    for eps in epsilons:
        e = exp.with_changes(**{"noise.epsilon": float(eps)})
        if eps > 0 and e.noise_kind == "none":
            raise ConfigError("sweep over epsilon needs a noise kind other than 'none'")
        res = run_ensemble(EnsembleConfig(e, cfg.paths, cfg.seed, cfg.horizon, cfg.delta_energy, cfg.workers))
        b = res.aggregates["blowup"]
        row = {"epsilon": float(eps), "p_blowup": b["p_hat"], "ci_lo": b["ci_lo"], "ci_hi": b["ci_hi"],
               "n_paths": res.aggregates["n_paths"], "failed": res.aggregates["failed"],
               "e_t_tau_sq": res.aggregates["e_t_tau_sq"]}
        if e.noise_kind != "none" and eps > 0:
            try:
                rep = threshold_report(threshold_inputs(e, export_stats_for_thresholds(res)), e.noise_kind)
                row["conditions_satisfied"] = all(c.satisfied for c in rep.conditions
                                                  if not c.id.endswith("[ensemble]"))
            except CritNLSError:
                row["conditions_satisfied"] = None
        rows.append(row)
    ps = [r["p_blowup"] for r in sorted(rows, key=lambda r: r["epsilon"])]
    trend = {"nonincreasing_in_epsilon": all(a >= b for a, b in zip(ps, ps[1:])),
             "nondecreasing_in_epsilon": all(a <= b for a, b in zip(ps, ps[1:]))}
    return {"rows": rows, "trend": trend, "initial_data": check,
            "detector": {"Gamma": exp.detector.gamma,
                         "amp_max": None if math.isinf(exp.detector.amp_max) else exp.detector.amp_max}}


def gamma_sensitivity(cfg: EnsembleConfig, gammas) -> list[dict]:
    """Blow-up frequency as a function of the detector threshold Gamma."""
    out = []
    for g in gammas:
        e = cfg.experiment.with_changes(**{"run.detector.Gamma": float(g)})
        res = run_ensemble(EnsembleConfig(e, cfg.paths, cfg.seed, cfg.horizon, None, cfg.workers))
        b = res.aggregates["blowup"]
        out.append({"Gamma": float(g), "p_blowup": b["p_hat"], "ci_lo": b["ci_lo"], "ci_hi": b["ci_hi"]})
    return out


__all__ = [
    "wilson_interval", "bootstrap_mean", "PathRecord", "run_path", "EnsembleConfig", "EnsembleResult",
    "run_ensemble", "energy_excursion_stats", "export_stats_for_thresholds", "threshold_inputs",
    "above_threshold", "blowup_probability_sweep", "gamma_sensitivity",
]

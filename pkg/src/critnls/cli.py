"""Command line entry point ``critnls``.

Exit codes: 0 completed, 2 blow-up detected (simulate), 3 configuration or
domain error, 4 numerical failure. Errors are written to stderr as one JSON
object. Every data file embeds the resolved config and the package version;
the wall-clock timestamp lives only in ``meta.json`` so reruns with the same
config and seed give byte-identical data files.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import math
import os
import sys
import warnings

from . import __version__
from .config import DEFAULTS, Experiment, load, resolve, set_path, thread_count
from .errors import ConfigError, CritNLSError

EXIT_OK, EXIT_BLOWUP, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3, 4


def _flatten(d, prefix=""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, key + ".")
        else:
            yield key, v


CONFIG_HELP = """config keys (defaults in brackets):
  dimension               3, 4 or 5 (required)
  grid.kind               radial | periodic_box (required); periodic_box needs dimension 3
  grid.R, grid.N          radial outer radius and node count
  grid.L, grid.N          box side and points per axis
  initial.kind            gaussian | scaled_Q | custom (required)
  initial.amplitude, initial.width, initial.chirp          gaussian data
  initial.alpha, initial.cutoff, initial.cutoff_width, initial.match_gradient   scaled_Q data
  initial.values          custom samples, real or [re, im] pairs
""" + "\n".join(f"  {k:<24}[{json.dumps(v)}]" for k, v in _flatten(DEFAULTS)) + """

environment: CRITNLS_THREADS caps the ensemble worker count.
exit codes: 0 completed, 2 blow-up detected, 3 configuration error, 4 numerical failure.
"""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"bad command line: {message}")


# ---------------------------------------------------------------- output helpers

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r.get(h)) for h in header])


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _meta(out_dir, command, cfg) -> None:
    write_json(os.path.join(out_dir, "meta.json"), {
        "command": command, "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "threads": thread_count(cfg["ensemble"]["workers"]),
        "CRITNLS_THREADS": os.environ.get("CRITNLS_THREADS"),
    })


def _header(cfg) -> dict:
    return {"version": __version__, "config": cfg}


# ---------------------------------------------------------------- config plumbing

def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _experiment(args) -> Experiment:
    cfg = load(args.config)
    overrides = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = _parse_value(v)
    for flag, key in (("T_max", "run.T_max"), ("dt0", "run.dt0"), ("seed", "run.seed"),
                      ("epsilon", "noise.epsilon"), ("gamma", "run.detector.Gamma"),
                      ("amp_max", "run.detector.amp_max"), ("paths", "ensemble.paths"),
                      ("ens_seed", "ensemble.seed"), ("workers", "ensemble.workers")):
        val = getattr(args, flag, None)
        if val is not None:
            overrides[key] = val
    for k, v in overrides.items():
        cfg = set_path(cfg, k, v)
    cfg = resolve(cfg)
    exp = Experiment(cfg)
    # build everything now so config errors surface before any file is written
    exp.grid, exp.u0
    if exp.noise_kind != "none":
        exp.op
    return exp


def _out_dir(args, exp) -> str:
    out = args.out or exp.config["output"]["dir"]
    os.makedirs(out, exist_ok=True)
    return out


def _formats(exp):
    return exp.config["output"]["formats"]


# ---------------------------------------------------------------- subcommands

def cmd_constants(args) -> int:
    from .constants import exponents, ground_state_constants
    e = exponents(args.n)
    gs = ground_state_constants(args.n)

    def num(f):
        return int(f) if f.denominator == 1 else float(f)

    out = {"n": args.n, "p": num(e.p), "gamma": num(e.gamma), "rho": num(e.rho), "kappa": num(e.kappa),
           "exact": {k: v for k, v in e.as_dict().items() if k != "n"},
           "c_n": gs.c_n, "grad_q_sq": gs.grad_q_sq, "h_q": gs.h_q,
           "quadrature_error": gs.quadrature_error}
    if args.json:
        _emit(out)
    else:
        for k, v in out.items():
            if k != "exact":
                print(f"{k:>16} = {v}")
    return EXIT_OK


def cmd_noise_constants(args) -> int:
    from .noise import noise_constants
    exp = _experiment(args)
    _emit({**noise_constants(exp.op).as_dict(), "basis": exp.noise_spec.basis, "K": exp.noise_spec.K,
           "epsilon": exp.noise_spec.epsilon})
    return EXIT_OK


def cmd_simulate(args) -> int:
    from . import plotting
    from .diagnostics import ROW_FIELDS
    from .noise import StreamSource
    from .solver import Status, run
    exp = _experiment(args)
    out = _out_dir(args, exp)
    src = StreamSource(exp.op, exp.seed, 0) if exp.noise_kind != "none" else None
    state = exp.new_state(source=src)
    state, rows = run(state, exp.T_max, exp.policy, exp.detector, exp.record_interval,
                      max_steps=int(exp.config["run"]["max_steps"]))
    formats = _formats(exp)
    if "csv" in formats:
        write_csv(os.path.join(out, "trajectory.csv"), ROW_FIELDS, rows)
    blown = state.status is Status.BLOWN_UP
    result = {**_header(exp.config), "status": state.status.value, "t_end": state.t,
              "t_blowup": state.t_blowup, "blowup_reason": state.blowup_reason,
              "steps": state.step_index, "initial": rows[0], "final": rows[-1]}
    if "json" in formats:
        write_json(os.path.join(out, "run.json"), result)
    plotting.write(plotting.trajectory_spec(rows), os.path.join(out, "trajectory"),
                   [f for f in formats if f in ("json", "png")])
    _meta(out, "simulate", exp.config)
    _emit({k: result[k] for k in ("status", "t_end", "t_blowup", "blowup_reason", "steps")})
    return EXIT_BLOWUP if blown else EXIT_OK


def cmd_verify_identities(args) -> int:
    from . import plotting
    from .studies import identity_study
    exp = _experiment(args)
    res = identity_study(exp)
    payload = {**_header(exp.config), **res}
    if args.out:
        out = _out_dir(args, exp)
        write_json(os.path.join(out, "identities.json"), payload)
        plotting.write(plotting.convergence_spec(res["table"]), os.path.join(out, "identities"),
                       [f for f in _formats(exp) if f in ("json", "png")])
        _meta(out, "verify-identities", exp.config)
    _emit({k: res[k] for k in ("kind", "T", "table", "ratios")})
    return EXIT_OK


def cmd_thresholds(args) -> int:
    from .ensemble import threshold_inputs
    from .thresholds import contraction_budget, threshold_report
    exp = _experiment(args)
    stats = None
    if args.ensemble_stats:
        try:
            with open(args.ensemble_stats, encoding="utf-8") as fh:
                stats = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read ensemble stats: {exc}") from None
    inp = threshold_inputs(exp, stats)
    kind = exp.noise_kind if exp.noise_kind != "none" else "additive"
    report = threshold_report(inp, kind).as_dict()
    th = exp.config["thresholds"]
    try:
        report["contraction_budget"] = contraction_budget(th["A"], th["c_str"], th["c_sob"], exp.n).as_dict()
    except CritNLSError as exc:
        report["contraction_budget"] = exc.to_dict()
    _emit(_clean_json({**_header(exp.config), "report": report}))
    return EXIT_OK


def _clean_json(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean_json(v) for v in obj]
    return obj


SUMMARY_FIELDS = ("epsilon", "p_blowup", "ci_lo", "ci_hi", "n_paths")


def cmd_ensemble(args) -> int:
    from .diagnostics import ROW_FIELDS
    from .ensemble import (EnsembleConfig, energy_excursion_stats, export_stats_for_thresholds,
                           gamma_sensitivity, run_ensemble)
    exp = _experiment(args)
    per_path = args.per_path or exp.config["output"]["per_path"]
    ecfg = EnsembleConfig.from_experiment(exp, keep_rows=per_path)
    out = _out_dir(args, exp)
    res = run_ensemble(ecfg)
    agg = {**_header(exp.config), **res.as_dict(per_path=True)}
    if ecfg.delta_energy is not None:
        agg["energy_excursion_stats"] = energy_excursion_stats(
            ecfg, result=res, n_boot=int(exp.config["ensemble"]["bootstrap"]))
    gammas = exp.config["ensemble"]["gammas"]
    if gammas:
        agg["gamma_sensitivity"] = gamma_sensitivity(ecfg, gammas)
    stats = export_stats_for_thresholds(res)
    write_json(os.path.join(out, "aggregate.json"), _clean_json(agg))
    write_json(os.path.join(out, "threshold_stats.json"), stats)
    b = res.aggregates["blowup"]
    row = {"epsilon": exp.noise_spec.epsilon, "p_blowup": b["p_hat"], "ci_lo": b["ci_lo"],
           "ci_hi": b["ci_hi"], "n_paths": res.aggregates["n_paths"]}
    write_csv(os.path.join(out, "summary.csv"), SUMMARY_FIELDS, [row])
    if per_path:
        for rec in res.records:
            write_csv(os.path.join(out, f"path_{rec.path:05d}.csv"), ROW_FIELDS, rec.rows or [])
    _meta(out, "ensemble", exp.config)
    _emit(_clean_json({"aggregates": res.aggregates, "out": out}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from . import plotting
    from .ensemble import EnsembleConfig, blowup_probability_sweep
    exp = _experiment(args)
    eps = args.epsilons if args.epsilons is not None else exp.config["ensemble"]["epsilons"]
    if not eps:
        raise ConfigError("sweep needs epsilons (--epsilons or ensemble.epsilons)")
    ecfg = EnsembleConfig.from_experiment(exp)
    out = _out_dir(args, exp)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = blowup_probability_sweep(ecfg, eps)
    for w in caught:
        sys.stderr.write(json.dumps({"warning": str(w.message), "initial_data": res["initial_data"]}) + "\n")
    write_json(os.path.join(out, "sweep.json"), _clean_json({**_header(exp.config), **res}))
    write_csv(os.path.join(out, "summary.csv"), SUMMARY_FIELDS, res["rows"])
    plotting.write(plotting.sweep_spec(res["rows"]), os.path.join(out, "sweep"),
                   [f for f in _formats(exp) if f in ("json", "png")])
    _meta(out, "sweep", exp.config)
    _emit(_clean_json({"rows": res["rows"], "trend": res["trend"], "out": out}))
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="critnls", description="Energy-critical stochastic NLS toolkit.",
                epilog=CONFIG_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=f"critnls {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def with_config(name, help_, func):
        sp = sub.add_parser(name, help=help_, description=help_, epilog=CONFIG_HELP,
                            formatter_class=argparse.RawDescriptionHelpFormatter)
        sp.add_argument("config", help="experiment config (JSON)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key, e.g. run.T_max=2 (value parsed as JSON)")
        sp.add_argument("--out", help="output directory (default output.dir)")
        sp.set_defaults(func=func)
        return sp

    c = sub.add_parser("constants", help="exponents and ground-state constants")
    c.add_argument("--n", type=int, required=True, choices=(3, 4, 5))
    c.add_argument("--json", action="store_true", help="emit JSON")
    c.set_defaults(func=cmd_constants)

    with_config("noise-constants", "noise-operator constants as JSON", cmd_noise_constants)

    s = with_config("simulate", "run one path and write its trajectory", cmd_simulate)
    s.add_argument("--T-max", dest="T_max", type=float)
    s.add_argument("--dt0", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--gamma", type=float, help="detector Gamma")
    s.add_argument("--amp-max", dest="amp_max", type=float)

    with_config("verify-identities", "dt-convergence study of the evolution identities",
                cmd_verify_identities)

    t = with_config("thresholds", "T*, blow-up conditions and contraction budget", cmd_thresholds)
    t.add_argument("--ensemble-stats", help="JSON from 'critnls ensemble' (threshold_stats.json)")

    for name, help_, func in (("ensemble", "Monte Carlo ensemble over noise paths", cmd_ensemble),
                              ("sweep", "blow-up frequency over noise amplitudes", cmd_sweep)):
        e = with_config(name, help_, func)
        e.add_argument("--paths", type=int)
        e.add_argument("--seed", dest="ens_seed", type=int, help="ensemble seed")
        e.add_argument("--workers", type=int)
        e.add_argument("--epsilon", type=float)
        e.add_argument("--T-max", dest="T_max", type=float)
        if name == "ensemble":
            e.add_argument("--per-path", action="store_true", help="write one trajectory CSV per path")
        else:
            e.add_argument("--epsilons", type=float, nargs="+")
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CritNLSError as exc:
        sys.stderr.write(json.dumps(exc.to_dict(), default=str) + "\n")
        return exc.exit_code
    except (FloatingPointError, OverflowError, MemoryError) as exc:
        sys.stderr.write(json.dumps({"error": "numerical_error", "message": str(exc)}) + "\n")
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())

"""Experiment configuration: JSON schema, defaults, and object construction.

A config is validated against :data:`SCHEMA` (unknown keys are rejected at
every level), merged with :data:`DEFAULTS`, and turned into an
:class:`Experiment` holding the grid, noise operator, initial field and run
policy. ``resolve(cfg)`` is idempotent, so an emitted resolved config
re-parses to an equal one.
"""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass, field
from functools import cached_property

import jsonschema

from .errors import ConfigError

CONFIG_VERSION = "1"

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_int_pos = {"type": "integer", "minimum": 1}
_nullable_num = {"type": ["number", "null"]}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCHEMA = _obj({
    "version": {"type": "string", "enum": [CONFIG_VERSION]},
    "dimension": {"type": "integer", "enum": [3, 4, 5]},
    "grid": _obj({
        "kind": {"type": "string", "enum": ["radial", "periodic_box"]},
        "R": _pos, "L": _pos, "N": {"type": "integer", "minimum": 16},
    }, required=["kind", "N"]),
    "physics": _obj({
        "lambda": {"type": "number", "enum": [1, -1]},
        "noise_kind": {"type": "string", "enum": ["none", "additive", "multiplicative_stratonovich"]},
    }),
    "noise": _obj({
        "basis": {"type": "string", "enum": ["sine_radial", "fourier_periodic", "kernel"]},
        "K": _int_pos, "decay_q": _num, "epsilon": _nonneg,
        "complexness": {"type": "string", "enum": ["complex_valued", "real_valued"]},
        "kernel_length": _pos, "kernel_extent": {"type": ["number", "null"], "exclusiveMinimum": 0},
    }),
    "initial": {
        "type": "object",
        "properties": {
            "kind": {"type": "string", "enum": ["gaussian", "scaled_Q", "custom"]},
            "amplitude": _num, "width": _pos, "chirp": _num,
            "alpha": _num, "cutoff": _nullable_num, "cutoff_width": _nullable_num,
            "match_gradient": {"type": "boolean"},
            "values": {"type": "array"},
        },
        "required": ["kind"],
        "additionalProperties": False,
    },
    "run": _obj({
        "T_max": _nonneg, "dt0": _pos, "dt_min": _pos,
        "adaptive": {"type": "boolean"}, "amplitude_control": {"type": "boolean"},
        "detector": _obj({"Gamma": _pos, "amp_max": {"type": ["number", "null"], "exclusiveMinimum": 0}}),
        "record_interval": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "max_steps": _int_pos,
    }),
    "ensemble": _obj({
        "paths": _int_pos, "seed": {"type": "integer", "minimum": 0},
        "horizon": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "delta_energy": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "epsilons": {"type": "array", "items": _nonneg},
        "gammas": {"type": "array", "items": _pos},
        "bootstrap": _int_pos,
        "workers": {"type": ["integer", "null"], "minimum": 1},
    }),
    "identities": _obj({
        "dts": {"type": "array", "items": _pos, "minItems": 2},
        "T": _pos, "seed": {"type": "integer", "minimum": 0},
    }),
    "thresholds": _obj({
        "beta0": _pos, "delta": _pos, "t": _nonneg, "epsilon": _nonneg,
        "grad_cap": _pos, "N": _pos, "A": _pos, "c_str": _pos, "c_sob": _pos,
    }),
    "output": _obj({
        "dir": {"type": "string"},
        "formats": {"type": "array", "items": {"type": "string", "enum": ["json", "csv", "png"]}},
        "per_path": {"type": "boolean"},
    }),
}, required=["dimension", "grid", "initial"])


DEFAULTS = {
    "version": CONFIG_VERSION,
    "physics": {"lambda": 1, "noise_kind": "none"},
    "noise": {"basis": "sine_radial", "K": 32, "decay_q": 2.0, "epsilon": 0.0,
              "complexness": "complex_valued", "kernel_length": 1.0, "kernel_extent": None},
    "run": {"T_max": 1.0, "dt0": 1e-3, "dt_min": 1e-9, "adaptive": True, "amplitude_control": True,
            "detector": {"Gamma": 50.0, "amp_max": None}, "record_interval": 0.1, "seed": 0,
            "max_steps": 10_000_000},
    "ensemble": {"paths": 100, "seed": 0, "horizon": None, "delta_energy": None,
                 "epsilons": [], "gammas": [], "bootstrap": 1000, "workers": None},
    "identities": {"dts": [0.01, 0.005, 0.0025, 0.00125], "T": 0.5, "seed": 0},
    "thresholds": {"beta0": 0.5, "delta": 1.2, "t": 1.0, "epsilon": 0.1, "grad_cap": 10.0,
                   "N": 10.0, "A": 1.0, "c_str": 1.0, "c_sob": 1.0},
    "output": {"dir": "critnls_out", "formats": ["json", "csv", "png"], "per_path": False},
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path)
        raise ConfigError(f"invalid config at '{path or '<root>'}': {exc.message}", path=path) from None
    grid = cfg["grid"]
    if grid["kind"] == "radial" and "R" not in grid:
        raise ConfigError("radial grid needs R", path="grid")
    if grid["kind"] == "periodic_box" and "L" not in grid:
        raise ConfigError("periodic box needs L", path="grid")


def resolve(cfg: dict) -> dict:
    """Validate and fill defaults; the result validates again unchanged."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    validate(cfg)
    out = _merge(DEFAULTS, cfg)
    validate(out)
    return out


def load(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}", path=path) from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}", path=path) from None
    return resolve(raw)


def set_path(cfg: dict, dotted: str, value) -> dict:
    """Return a copy of ``cfg`` with ``a.b.c`` set to ``value``."""
    out = copy.deepcopy(cfg)
    node = out
    keys = dotted.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value
    return out


def thread_count(requested: int | None = None) -> int:
    """Worker count: the request, capped by CRITNLS_THREADS and the CPU count."""
    cap = os.environ.get("CRITNLS_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = max(1, int(cap))
        except ValueError:
            raise ConfigError("CRITNLS_THREADS must be a positive integer", value=cap) from None
    return max(1, min(requested or limit, limit))


@dataclass
class Experiment:
    """Fully built experiment from a resolved config."""

    config: dict
    overrides: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.config["dimension"])

    @cached_property
    def grid(self):
        from .grid import make_grid
        return make_grid(self.config["grid"], self.n)

    @property
    def lam(self) -> float:
        return float(self.config["physics"]["lambda"])

    @property
    def noise_kind(self) -> str:
        return self.config["physics"]["noise_kind"]

    @cached_property
    def noise_spec(self):
        from .noise import NoiseSpec
        nz = self.config["noise"]
        return NoiseSpec(basis=nz["basis"], K=int(nz["K"]), decay_q=float(nz["decay_q"]),
                         epsilon=float(nz["epsilon"]), complexness=nz["complexness"],
                         kernel_length=float(nz["kernel_length"]), kernel_extent=nz["kernel_extent"])

    @cached_property
    def op(self):
        from .noise import build_operator
        if self.noise_kind == "multiplicative_stratonovich" and self.noise_spec.complexness != "real_valued":
            raise ConfigError("multiplicative noise needs noise.complexness = real_valued")
        return build_operator(self.noise_spec, self.grid)

    @cached_property
    def u0(self):
        from .solver import make_initial
        return make_initial(self.config["initial"], self.grid)

    @property
    def policy(self):
        from .solver import DtPolicy
        r = self.config["run"]
        return DtPolicy(dt0=float(r["dt0"]), dt_min=float(r["dt_min"]), adaptive=bool(r["adaptive"]),
                        amplitude_control=bool(r["amplitude_control"]))

    @property
    def detector(self):
        from .solver import Detector
        d = self.config["run"]["detector"]
        amp = d["amp_max"]
        return Detector(gamma=float(d["Gamma"]), amp_max=math.inf if amp is None else float(amp))

    @property
    def T_max(self) -> float:
        return float(self.config["run"]["T_max"])

    @property
    def record_interval(self):
        ri = self.config["run"]["record_interval"]
        return None if ri is None else float(ri)

    @property
    def seed(self) -> int:
        return int(self.config["run"]["seed"])

    def with_changes(self, **dotted) -> "Experiment":
        cfg = self.config
        for k, v in dotted.items():
            cfg = set_path(cfg, k.replace("__", "."), v)
        return Experiment(resolve(cfg))

    def new_state(self, path: int = 0, source=None, accumulators: bool = False):
        from .noise import StreamSource
        from .solver import new_state
        if self.noise_kind == "none":
            return new_state(self.u0, self.grid, self.lam, "none", accumulators=accumulators)
        op = self.op
        src = source if source is not None else StreamSource(op, self.seed, path)
        return new_state(self.u0, self.grid, self.lam, self.noise_kind, op, src, accumulators=accumulators)


def experiment_from(cfg: dict) -> Experiment:
    return Experiment(resolve(cfg))

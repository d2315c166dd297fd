import json

import pytest

from critnls.config import DEFAULTS, Experiment, load, resolve, set_path, thread_count
from critnls.errors import ConfigError

MINIMAL = {"dimension": 3, "grid": {"kind": "radial", "R": 10, "N": 64}, "initial": {"kind": "gaussian"}}


def test_defaults_filled():
    cfg = resolve(MINIMAL)
    assert cfg["run"]["detector"]["Gamma"] == DEFAULTS["run"]["detector"]["Gamma"]
    assert cfg["physics"]["noise_kind"] == "none"


def test_round_trip():
    cfg = resolve(MINIMAL)
    assert resolve(json.loads(json.dumps(cfg))) == cfg


@pytest.mark.parametrize("bad", [
    {**MINIMAL, "extra": 1},
    {**MINIMAL, "grid": {"kind": "radial", "R": 10, "N": 64, "dx": 1}},
    {**MINIMAL, "run": {"detector": {"gamma": 3}}},
    {**MINIMAL, "dimension": 6},
    {**MINIMAL, "grid": {"kind": "radial", "N": 64}},
    {**MINIMAL, "grid": {"kind": "periodic_box", "N": 64}},
    {**MINIMAL, "physics": {"lambda": 0.5}},
    {"grid": MINIMAL["grid"], "initial": MINIMAL["initial"]},
    [1, 2],
])
def test_invalid_configs_rejected(bad):
    with pytest.raises(ConfigError):
        resolve(bad)


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load(str(tmp_path / "missing.json"))
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load(str(p))


def test_set_path_does_not_mutate():
    cfg = resolve(MINIMAL)
    new = set_path(cfg, "run.detector.Gamma", 7.0)
    assert new["run"]["detector"]["Gamma"] == 7.0
    assert cfg["run"]["detector"]["Gamma"] == 50.0


def test_multiplicative_needs_real_noise():
    exp = Experiment(resolve({**MINIMAL, "physics": {"noise_kind": "multiplicative_stratonovich"}}))
    with pytest.raises(ConfigError):
        exp.op


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("CRITNLS_THREADS", "3")
    assert thread_count(8) == 3
    assert thread_count(2) == 2
    monkeypatch.setenv("CRITNLS_THREADS", "zero")
    with pytest.raises(ConfigError):
        thread_count()

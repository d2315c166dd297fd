import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from critnls.config import experiment_from
from critnls.constants import ground_state_constants
from critnls.ensemble import (EnsembleConfig, PathRecord, blowup_probability_sweep, bootstrap_mean,
                              energy_excursion_stats, export_stats_for_thresholds, run_ensemble,
                              run_path, threshold_inputs, wilson_interval)
from critnls.errors import ConfigError, DomainError

BASE = {"dimension": 3, "grid": {"kind": "radial", "R": 15, "N": 200},
        "physics": {"noise_kind": "additive"}, "noise": {"K": 8, "epsilon": 0.05},
        "initial": {"kind": "gaussian", "amplitude": 1.0, "width": 1.0},
        "run": {"T_max": 0.2, "dt0": 0.01}}


def fake_record(i, blown, t_end=1.0, mass0=1.0):
    return PathRecord(path=i, blown_up=blown, failed=False, t_end=t_end, t_fire=t_end if blown else None,
                      reason="gradient" if blown else None, sup_energy=0.0, sup_grad=0.0, steps=0,
                      mass0=mass0, energy0=0.0, grad0=1.0, variance0=1.0, virial0=0.0)


@given(st.integers(1, 500), st.data())
def test_wilson_interval_contains_estimate(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n)
    assert 0 <= lo <= k / n <= hi <= 1


def test_wilson_interval_domain():
    with pytest.raises(DomainError):
        wilson_interval(3, 2)
    with pytest.raises(DomainError):
        wilson_interval(0, 0)


def test_wilson_coverage_with_synthetic_bernoulli():
    exp = experiment_from(BASE)
    rng = np.random.default_rng(12345)
    p, P, trials = 0.3, 100, 200
    covered = 0
    for _ in range(trials):
        draws = rng.random(P) < p
        res = run_ensemble(EnsembleConfig(exp, paths=P), runner=lambda i: fake_record(i, bool(draws[i])))
        b = res.aggregates["blowup"]
        covered += b["ci_lo"] <= p <= b["ci_hi"]
    assert 0.92 <= covered / trials <= 0.98


def test_bootstrap_constant_data():
    lo, hi, dist = bootstrap_mean([0.0] * 10, 50)
    assert lo == hi == 0.0 and len(dist) == 50


def test_degenerate_ensemble_is_exact():
    exp = experiment_from({**BASE, "noise": {"K": 8, "epsilon": 0.0}})
    res = run_ensemble(EnsembleConfig(exp, paths=25, seed=1))
    assert res.aggregates["blowup"]["p_hat"] in (0.0, 1.0)
    assert res.settings["degenerate"]
    assert len({r.sup_energy for r in res.records}) == 1


def test_reproducible_and_worker_independent(monkeypatch):
    exp = experiment_from(BASE)
    a = run_ensemble(EnsembleConfig(exp, paths=6, seed=9, delta_energy=1.5)).to_json()
    b = run_ensemble(EnsembleConfig(exp, paths=6, seed=9, delta_energy=1.5)).to_json()
    assert a == b
    monkeypatch.setenv("CRITNLS_THREADS", "2")
    c = run_ensemble(EnsembleConfig(exp, paths=6, seed=9, delta_energy=1.5, workers=2)).to_json()
    assert a == c
    d = run_ensemble(EnsembleConfig(exp, paths=6, seed=10, delta_energy=1.5)).to_json()
    assert a != d


def test_path_recomputable_in_isolation():
    exp = experiment_from(BASE)
    res = run_ensemble(EnsembleConfig(exp, paths=4, seed=2))
    alone = run_path(exp.config, 3, seed=2)
    assert alone.as_dict() == res.records[3].as_dict()


def test_export_stats_trivial_cases():
    exp = experiment_from(BASE)
    res = run_ensemble(EnsembleConfig(exp, paths=4, seed=0))
    st_ = export_stats_for_thresholds(res)
    assert st_["e_mass_sq"] == pytest.approx(st_["e_mass"] ** 2)
    assert st_["e_t_tau_sq"] == pytest.approx(0.2**2)  # all paths survive
    mixed = run_ensemble(EnsembleConfig(exp, paths=3),
                         runner=lambda i: fake_record(i, i == 0, t_end=[0.5, 1.0, 1.0][i]))
    v = export_stats_for_thresholds(mixed)["e_t_tau_sq"]
    assert 0.25 < v < 1.0


def test_energy_excursion_zero_noise_trapped():
    exp = experiment_from({**BASE, "noise": {"K": 8, "epsilon": 0.0}})
    out = energy_excursion_stats(EnsembleConfig(exp, paths=10, delta_energy=1.2))
    assert out["p_hat"] == 0.0
    assert out["analytic_bound"] == pytest.approx(out["beta"] / 1.2)
    assert out["consistent"]


def test_energy_excursion_requires_delta_above_beta():
    exp = experiment_from(BASE)
    with pytest.raises(DomainError):
        energy_excursion_stats(EnsembleConfig(exp, paths=2, delta_energy=0.1))


def test_trapping_consistency_on_paths():
    exp = experiment_from(BASE)
    gs = ground_state_constants(3)
    res = run_ensemble(EnsembleConfig(exp, paths=8, seed=4))
    for r in res.records:
        if r.sup_energy < gs.h_q and r.grad0 < gs.grad_q:
            assert r.sup_grad <= gs.grad_q + 1e-3


def test_survival_nonincreasing_in_horizon():
    cfg = {**BASE, "noise": {"K": 8, "epsilon": 0.2},
           "initial": {"kind": "gaussian", "amplitude": 2.6, "width": 1.0},
           "run": {"T_max": 0.6, "dt0": 0.005, "detector": {"Gamma": 4.0}}}
    exp = experiment_from(cfg)
    surv = [run_ensemble(EnsembleConfig(exp, paths=20, seed=1, horizon=T)).aggregates["survival"]
            for T in (0.05, 0.3, 0.6)]
    for a, b in zip(surv, surv[1:]):
        assert b["p_hat"] <= a["ci_hi"]


def test_sweep_warns_for_data_below_threshold():
    exp = experiment_from(BASE)
    with pytest.warns(UserWarning):
        out = blowup_probability_sweep(EnsembleConfig(exp, paths=3), [0.0, 0.05])
    assert [r["epsilon"] for r in out["rows"]] == [0.0, 0.05]
    assert not out["initial_data"]["ok"]


def test_sweep_needs_noise_kind():
    exp = experiment_from({**BASE, "physics": {"noise_kind": "none"}})
    with pytest.raises(ConfigError), pytest.warns(UserWarning):
        blowup_probability_sweep(EnsembleConfig(exp, paths=2), [0.1])


def test_threshold_inputs_take_ensemble_moments():
    exp = experiment_from(BASE)
    inp = threshold_inputs(exp, {"e_t_tau_sq": 0.01, "e_mass": 3.0})
    assert inp.e_t_tau_sq == 0.01 and inp.e_mass == 3.0
    assert math.isfinite(inp.hs_norm_1) and inp.hs_norm_1 > 0

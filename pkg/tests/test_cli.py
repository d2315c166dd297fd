import json
import os
import subprocess
import sys

import pytest

from critnls.cli import main

SMALL = {"dimension": 3, "grid": {"kind": "radial", "R": 15, "N": 200},
         "initial": {"kind": "gaussian", "amplitude": 0.5, "width": 1.0},
         "run": {"T_max": 0.1, "dt0": 0.01, "record_interval": 0.05},
         "output": {"formats": ["json", "csv"]}}


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_constants_n4(capsys):
    assert main(["constants", "--n", "4", "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["p"] == 6 and out["gamma"] == 6
    assert {"n", "p", "gamma", "rho", "kappa", "c_n", "grad_q_sq", "h_q", "quadrature_error"} <= set(out)


def test_malformed_config_exit_3_without_outputs(tmp_path, capsys):
    out_dir = tmp_path / "out"
    cfg = write(tmp_path, {**SMALL, "surprise": True, "output": {"dir": str(out_dir)}})
    assert main(["simulate", cfg]) == 3
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "config_error"
    assert not out_dir.exists()


def test_bad_flag_is_config_error(capsys):
    assert main(["simulate"]) == 3
    assert json.loads(capsys.readouterr().err)["error"] == "config_error"


def test_simulate_outputs_and_idempotence(tmp_path):
    cfg = write(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", cfg, "--out", str(a)]) == 0
    assert main(["simulate", cfg, "--out", str(b)]) == 0
    header = (a / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,mass,energy,grad_norm,variance,virial_g,sup_amp,dt"
    for name in ("trajectory.csv", "run.json", "trajectory.plot.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    run = json.loads((a / "run.json").read_text())
    assert run["config"]["run"]["T_max"] == 0.1 and "version" in run
    assert "timestamp" in json.loads((a / "meta.json").read_text())


def test_csv_floats_round_trip(tmp_path):
    cfg = write(tmp_path, SMALL)
    main(["simulate", cfg, "--out", str(tmp_path / "o")])
    lines = (tmp_path / "o" / "trajectory.csv").read_text().splitlines()
    run = json.loads((tmp_path / "o" / "run.json").read_text())
    last = dict(zip(lines[0].split(","), map(float, lines[-1].split(","))))
    assert last["energy"] == run["final"]["energy"]


def test_flags_override_config(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    assert main(["simulate", cfg, "--out", str(tmp_path / "o"), "--T-max", "0.05",
                 "--set", "run.record_interval=0.025"]) == 0
    run = json.loads((tmp_path / "o" / "run.json").read_text())
    assert run["config"]["run"]["T_max"] == 0.05 and run["t_end"] == 0.05


def test_simulate_blowup_exit_2(tmp_path, capsys):
    cfg = {"dimension": 3, "grid": {"kind": "periodic_box", "L": 12, "N": 32},
           "initial": {"kind": "gaussian", "amplitude": 3.0, "width": 1.0},
           "run": {"T_max": 2.0, "dt0": 0.001, "detector": {"Gamma": 3.0}},
           "output": {"formats": ["json"]}}
    assert main(["simulate", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    run = json.loads((tmp_path / "o" / "run.json").read_text())
    assert run["status"] == "blown_up" and run["t_blowup"] < 2.0


def test_noise_constants_and_thresholds(tmp_path, capsys):
    cfg = write(tmp_path, {**SMALL, "physics": {"noise_kind": "additive"}, "noise": {"K": 8, "epsilon": 0.1}})
    assert main(["noise-constants", cfg]) == 0
    nc = json.loads(capsys.readouterr().out)
    assert nc["hs_norm_1"] > nc["hs_norm_0"] > 0
    stats = tmp_path / "stats.json"
    stats.write_text(json.dumps({"e_t_tau_sq": 0.5}))
    assert main(["thresholds", cfg, "--ensemble-stats", str(stats)]) == 0
    rep = json.loads(capsys.readouterr().out)["report"]
    ids = [c["id"] for c in rep["conditions"]]
    assert "A5[t^2]" in ids and "A5[ensemble]" in ids
    assert rep["contraction_budget"]["a"] > 0


def test_ensemble_and_sweep_outputs(tmp_path, capsys):
    cfg = write(tmp_path, {**SMALL, "physics": {"noise_kind": "additive"},
                           "noise": {"K": 8, "epsilon": 0.05}, "ensemble": {"delta_energy": 1.5}})
    out = tmp_path / "e"
    assert main(["ensemble", cfg, "--paths", "4", "--seed", "3", "--out", str(out), "--per-path"]) == 0
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == "epsilon,p_blowup,ci_lo,ci_hi,n_paths"
    assert len(list(out.glob("path_*.csv"))) == 4
    agg = json.loads((out / "aggregate.json").read_text())
    assert agg["settings"]["seed"] == 3 and "energy_excursion_stats" in agg
    out2 = tmp_path / "s"
    assert main(["sweep", cfg, "--paths", "3", "--epsilons", "0", "0.05", "--out", str(out2)]) == 0
    assert len((out2 / "summary.csv").read_text().splitlines()) == 3
    assert "not above" in capsys.readouterr().err


def test_verify_identities_deterministic(tmp_path, capsys):
    cfg = write(tmp_path, {**SMALL, "physics": {"lambda": -1}, "identities": {"dts": [0.01, 0.005], "T": 0.1}})
    assert main(["verify-identities", cfg]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["kind"] == "deterministic" and len(out["table"]["virial_first"]) == 2


def test_help_lists_config_keys():
    res = subprocess.run([sys.executable, "-m", "critnls.cli", "simulate", "--help"],
                         capture_output=True, text=True, env={**os.environ})
    assert res.returncode == 0
    for key in ("run.detector.Gamma", "noise.decay_q", "ensemble.paths", "CRITNLS_THREADS"):
        assert key in res.stdout

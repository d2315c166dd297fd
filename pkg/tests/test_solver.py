import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from critnls import diagnostics as diag
from critnls.constants import ground_state_constants
from critnls.errors import ConfigError, ContractError
from critnls.grid import PeriodicBox, RadialGrid
from critnls.noise import FrozenPath, NoiseSpec, StreamSource, build_operator
from critnls.solver import (Detector, DtPolicy, Status, make_initial, multiplicative_noise_step,
                            new_state, nonlinear_step, run, step)


@pytest.fixture(scope="module")
def grid():
    return RadialGrid(3, 15.0, 300)


def gaussian(grid, amp=1.0):
    return make_initial({"kind": "gaussian", "amplitude": amp, "width": 1.0}, grid)


def test_multiplicative_noise_conserves_mass_pathwise(grid):
    op = build_operator(NoiseSpec(K=16, epsilon=0.5, complexness="real_valued"), grid)
    s = new_state(gaussian(grid), grid, 1.0, "multiplicative_stratonovich", op, StreamSource(op, 4, 0))
    m0 = diag.mass(s.u, grid)
    s, rows = run(s, 0.2, DtPolicy(dt0=1e-3, adaptive=False), record_interval=0.05)
    assert abs(rows[-1]["mass"] - m0) / m0 < 1e-12


@given(st.floats(-5, 5), st.integers(0, 10**6))
def test_pointwise_substeps_preserve_modulus(lam, seed):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(32) + 1j * rng.standard_normal(32)
    np.testing.assert_allclose(np.abs(nonlinear_step(u, 0.1, lam, 3)), np.abs(u), rtol=1e-13)
    w = rng.standard_normal(32)
    np.testing.assert_allclose(np.abs(multiplicative_noise_step(u, w)), np.abs(u), rtol=1e-13)


def test_multiplicative_step_rejects_complex_increment():
    with pytest.raises(ContractError):
        multiplicative_noise_step(np.ones(4, complex), np.ones(4) * 1j)


def test_deterministic_energy_conservation_second_order(grid):
    drifts = []
    for dt in (0.004, 0.002):
        s = new_state(gaussian(grid, 0.8), grid, -1.0)
        s, rows = run(s, 0.4, DtPolicy(dt0=dt, adaptive=False), record_interval=0.1)
        drifts.append(max(abs(r["energy"] - rows[0]["energy"]) for r in rows))
    assert drifts[1] < 1e-3
    assert drifts[0] / drifts[1] > 3.0


def test_records_land_on_interval(grid):
    s = new_state(gaussian(grid, 0.5), grid, 1.0)
    s, rows = run(s, 0.3, DtPolicy(dt0=0.007), record_interval=0.1)
    assert [r["t"] for r in rows] == pytest.approx([0.0, 0.1, 0.2, 0.3])
    assert s.status is Status.COMPLETED
    assert list(rows[0]) == list(diag.ROW_FIELDS)


def test_zero_horizon(grid):
    s, rows = run(new_state(gaussian(grid), grid), 0.0)
    assert len(rows) == 1 and s.status is Status.COMPLETED


def test_step_on_finished_state(grid):
    s, _ = run(new_state(gaussian(grid), grid), 0.0)
    with pytest.raises(ContractError):
        step(s, 0.01)


def test_frozen_path_needs_fixed_steps(grid):
    op = build_operator(NoiseSpec(K=4, epsilon=0.1), grid)
    fp = FrozenPath(op, 0, 0.01, 10)
    s = new_state(gaussian(grid), grid, 1.0, "additive", op, fp)
    with pytest.raises(ConfigError):
        run(s, 0.1, DtPolicy(dt0=0.01, adaptive=True))


def test_noisy_state_needs_source(grid):
    with pytest.raises(ConfigError):
        new_state(gaussian(grid), grid, 1.0, "additive")


def test_detector_reasons():
    d = Detector(gamma=10.0, amp_max=5.0)
    assert d.fires(1.0, 1.0, 1.0) is None
    assert d.fires(10.0, 1.0, 1.0) == "gradient"
    assert d.fires(1.0, 5.0, 1.0) == "amplitude"
    assert d.fires(math.nan, 1.0, 1.0) == "non_finite"


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.sampled_from([3, 4, 5]))
def test_dt_policy_bounds(grad, amp, n):
    p = DtPolicy(dt0=0.01, dt_min=1e-6)
    dt = p.next_dt(grad, amp, 1.0, 1.0, n)
    assert 1e-6 <= dt <= 0.01
    # growth of either scale can only shrink the step
    assert p.next_dt(2 * grad, amp, 1.0, 1.0, n) <= dt
    assert p.next_dt(grad, 2 * amp, 1.0, 1.0, n) <= dt


def test_scaled_q_matches_gradient():
    g = RadialGrid(3, 40.0, 800)
    u = make_initial({"kind": "scaled_Q", "alpha": 1.2, "cutoff": 38, "cutoff_width": 30,
                      "match_gradient": True}, g)
    assert diag.grad_norm(u, g) == pytest.approx(1.2 * ground_state_constants(3).grad_q, rel=1e-12)
    assert diag.variance(u, g) < math.inf


@pytest.mark.parametrize("spec", [{"kind": "gaussian", "width": 0}, {"kind": "scaled_Q", "cutoff": 99},
                                  {"kind": "custom", "values": [1, 2]}, {"kind": "sphere"}])
def test_bad_initial_data(grid, spec):
    with pytest.raises(ConfigError):
        make_initial(spec, grid)


def test_custom_initial_pairs(grid):
    vals = np.stack([np.ones(grid.N), np.zeros(grid.N)], axis=-1).tolist()
    np.testing.assert_array_equal(make_initial({"kind": "custom", "values": vals}, grid), np.ones(grid.N))


def test_focusing_blowup_fires_on_box():
    g = PeriodicBox(3, 12.0, 32)
    u = make_initial({"kind": "gaussian", "amplitude": 3.0, "width": 1.0}, g)
    assert diag.energy(u, g) < 0
    s, _ = run(new_state(u, g, 1.0), 2.0, DtPolicy(dt0=1e-3), Detector(gamma=3.0))
    assert s.status is Status.BLOWN_UP and s.t_blowup < 2.0

import math
from fractions import Fraction

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from critnls.constants import (DIMENSIONS, TrappingRegion, check_dimension, exponents,
                               ground_state_constants, q_profile, q_profile_derivative,
                               sphere_area, trapping_f, trapping_predicate)
from critnls.errors import DomainError

mp.mp.dps = 40

# Frozen reference values, checked against the mpmath oracles below.
GOLDEN = {
    3: (0.4272605428625267, 12.820992204969127),
    4: (0.31218920569777797, 105.27578027828649),
    5: (0.25983308068493427, 844.3602647627386),
}


def talenti_constant(n):
    """Sharp Sobolev constant in closed form, evaluated in mpmath."""
    n = mp.mpf(n)
    return 1 / mp.sqrt(mp.pi * n * (n - 2)) * (mp.gamma(n) / mp.gamma(n / 2)) ** (1 / n)


def grad_q_sq_mp(n):
    a = mp.mpf(n * (n - 2))
    area = 2 * mp.pi ** (mp.mpf(n) / 2) / mp.gamma(mp.mpf(n) / 2)

    def dq(r):
        return -(n - 2) * r / a * (1 + r**2 / a) ** (-mp.mpf(n) / 2)

    return area * mp.quad(lambda r: dq(r) ** 2 * r ** (n - 1), [0, 1, 10, 100, mp.inf])


@pytest.mark.parametrize("n", DIMENSIONS)
def test_exponent_identities_exact(n):
    e = exponents(n)
    assert 2 / e.gamma + Fraction(n) / e.rho == Fraction(n, 2)
    assert 2 / e.gamma + Fraction(n) / e.p == Fraction(n, 2) - 1


def test_exponents_three_dimensions():
    e = exponents(3)
    assert (e.p, e.gamma, e.rho, e.kappa) == (10, 10, Fraction(30, 13), 15)


def test_exponents_four_dimensions():
    e = exponents(4)
    assert e.p == 6 and e.gamma == 6


@pytest.mark.parametrize("n", [0, 1, 2, 6, 7, 3.5, "3"])
def test_dimension_rejected(n):
    with pytest.raises(DomainError):
        check_dimension(n)


@pytest.mark.parametrize("n", DIMENSIONS)
def test_sharp_constant_matches_closed_form(n):
    gs = ground_state_constants(n)
    assert gs.c_n == pytest.approx(float(talenti_constant(n)), rel=1e-13)
    assert gs.c_n == pytest.approx(GOLDEN[n][0], rel=1e-14)


@pytest.mark.parametrize("n", DIMENSIONS)
def test_grad_q_matches_mpmath(n):
    gs = ground_state_constants(n)
    assert gs.grad_q_sq == pytest.approx(float(grad_q_sq_mp(n)), rel=1e-12)
    assert gs.grad_q_sq == pytest.approx(GOLDEN[n][1], rel=1e-13)


@pytest.mark.parametrize("n", DIMENSIONS)
def test_ground_state_self_consistency(n):
    gs = ground_state_constants(n)
    assert abs(gs.h_q - gs.grad_q_sq / n) / gs.h_q < 1e-6
    assert abs(gs.grad_q_sq * gs.c_n**n - 1) < 1e-5
    # Pohozaev: ||Q||_crit^crit = ||grad Q||^2 for the ground state
    assert gs.potential_q == pytest.approx(gs.grad_q_sq, rel=1e-10)
    assert 0 < gs.quadrature_error < 1e-10


@pytest.mark.parametrize("n", DIMENSIONS)
def test_trapping_function_peak_is_ground_state(n):
    gs = ground_state_constants(n)
    xc = gs.grad_q_sq
    assert trapping_f(xc, n) == pytest.approx(gs.h_q, rel=1e-12)
    # maximum at x_c
    for x in (0.5 * xc, 0.9 * xc, 1.1 * xc, 2 * xc):
        assert trapping_f(x, n) < trapping_f(xc, n)


@given(st.sampled_from(DIMENSIONS), st.floats(0, 1), st.floats(0, 1))
def test_trapping_function_increasing_below_peak(n, a, b):
    xc = ground_state_constants(n).grad_q_sq
    lo, hi = sorted((a * xc, b * xc))
    assert trapping_f(lo, n) <= trapping_f(hi, n) + 1e-12 * xc


@given(st.sampled_from(DIMENSIONS), st.floats(0, 1e4, allow_nan=False))
def test_q_profile_bounded_and_positive(n, r):
    q = q_profile(r, n)
    assert 0 < q <= 1
    assert q_profile_derivative(r, n) <= 0


@pytest.mark.parametrize("n", DIMENSIONS)
def test_q_derivative_matches_finite_difference(n):
    r = np.linspace(0.1, 5, 7)
    h = 1e-6
    fd = (q_profile(r + h, n) - q_profile(r - h, n)) / (2 * h)
    np.testing.assert_allclose(q_profile_derivative(r, n), fd, rtol=1e-7)


def test_q_profile_rejects_negative_radius():
    with pytest.raises(DomainError):
        q_profile(-1.0, 3)


def test_sphere_area():
    assert sphere_area(3) == pytest.approx(4 * math.pi)
    assert sphere_area(4) == pytest.approx(2 * math.pi**2)


def test_trapping_predicate_regions():
    gs = ground_state_constants(3)
    assert trapping_predicate(0.5 * gs.h_q, 0.5 * gs.grad_q, 3) is TrappingRegion.TRAPPED_BELOW
    assert trapping_predicate(0.5 * gs.h_q, 1.2 * gs.grad_q, 3) is TrappingRegion.ABOVE_THRESHOLD
    assert trapping_predicate(1.5 * gs.h_q, 0.5 * gs.grad_q, 3) is TrappingRegion.INDETERMINATE
    with pytest.raises(DomainError):
        trapping_predicate(math.nan, 1.0, 3)


def test_trapping_f_domain():
    with pytest.raises(DomainError):
        trapping_f(-1.0, 3)

"""
Unit tests for the coefficient theory.
Tests C(m)/D(m) classification, extinction exponents, eps_star and the
smallness conditions.
"""

import math

import pytest
from hypothesis import given, settings, strategies as st

from coeff import (CoefficientOutsideC, ExtinctionExponents, classify, delta, eps_star,
                   extinction_exponents, gn_exponents, in_cone, make_dm_coefficient,
                   require_cone, smallness_check, validate_exponent, young_thresholds)
from config import EXTINCTION_CONFIG, CoefficientClass

exponents = st.floats(min_value=0.01, max_value=0.99)
real_parts = st.floats(min_value=1e-3, max_value=1e3)


def test_critical_ray_is_in_d():
    """make_dm_coefficient lands on D(m)."""
    a = make_dm_coefficient(0.5, 1.0)
    assert abs(a.real - 1.0) < 1e-15
    assert abs(a.imag - 0.5 / (2.0 * math.sqrt(0.5))) < 1e-15, f"Im(a) = {a.imag}"
    assert classify(a, 0.5) == CoefficientClass.IN_D
    print(f"✓ D(0.5) coefficient a = {a}")


def test_negative_imaginary_part_is_outside():
    """a = 1 - i is rejected with a message citing the cone condition."""
    assert classify(1 - 1j, 0.5) == CoefficientClass.OUTSIDE
    assert not in_cone(1 - 1j, 0.5)
    with pytest.raises(CoefficientOutsideC) as info:
        require_cone(1 - 1j, 0.5)
    assert "Im(a) > 0" in str(info.value)
    assert "2*sqrt(m)*Im(a) >= (1-m)*|Re(a)|" in str(info.value)
    print("✓ a = 1 - i classified Outside")


def test_cone_interior_and_mirrored_edge():
    m = 0.5
    assert classify(1j, m) == CoefficientClass.IN_C_ONLY
    mirrored = complex(-1.0, (1.0 - m) / (2.0 * math.sqrt(m)))
    assert classify(mirrored, m) == CoefficientClass.IN_C_ONLY, "left edge of C(m) is in C(m)"
    assert classify(complex(3.0, 0.1), m) == CoefficientClass.OUTSIDE
    assert classify(0.0, m) == CoefficientClass.OUTSIDE


@pytest.mark.parametrize("m", [0.0, 1.0, -0.5, 1.5, float('nan')])
def test_exponent_out_of_range(m):
    with pytest.raises(ValueError):
        validate_exponent(m)


@pytest.mark.parametrize("re", [0.0, -1.0])
def test_dm_coefficient_needs_positive_real_part(re):
    with pytest.raises(ValueError):
        make_dm_coefficient(0.5, re)


@settings(max_examples=200, deadline=None)
@given(m=exponents, re=real_parts)
def test_ray_membership_property(m, re):
    """Points of D(m) classify as InD; lifting Im(a) stays in C(m); halving it leaves."""
    a = make_dm_coefficient(m, re)
    assert classify(a, m) == CoefficientClass.IN_D
    assert classify(complex(a.real, 1.5 * a.imag), m) == CoefficientClass.IN_C_ONLY
    assert classify(complex(a.real, 0.5 * a.imag), m) == CoefficientClass.OUTSIDE


@pytest.mark.parametrize("N,ell,m,expected", [
    (1, 1, 0.5, 3.5 / 4.0),
    (2, 1, 0.5, 1.0),
    (3, 1, 0.5, 4.5 / 4.0),
    (4, 2, 0.3, 1.0),
    (5, 2, 0.5, 8.5 / 8.0),
    (1, 2, 0.5, (5.0 + 1.5) / 8.0),
])
def test_delta_values(N, ell, m, expected):
    assert abs(delta(N, ell, m) - expected) < 1e-14, f"delta({N},{ell},{m}) = {delta(N, ell, m)}"


@pytest.mark.parametrize("N,ell", [(4, 1), (6, 2), (0, 1), (1, 3)])
def test_delta_outside_covered_pairs(N, ell):
    with pytest.raises(ValueError):
        delta(N, ell, 0.5)


@settings(max_examples=100, deadline=None)
@given(m1=exponents, m2=exponents)
def test_delta_monotonicity_in_m(m1, m2):
    """delta grows with m below the critical dimension 2l, shrinks above it."""
    lo, hi = sorted((m1, m2))
    if hi - lo < 1e-6:
        return
    assert delta(1, 1, lo) < delta(1, 1, hi)
    assert delta(3, 1, lo) > delta(3, 1, hi)
    assert delta(2, 1, lo) == delta(2, 1, hi) == 1.0
    assert delta(5, 2, lo) > delta(5, 2, hi)
    assert delta(3, 2, lo) < delta(3, 2, hi)


@settings(max_examples=100, deadline=None)
@given(m=exponents, pair=st.sampled_from([(1, 1), (2, 1), (3, 1), (1, 2), (3, 2), (5, 2)]))
def test_gn_exponents_are_scale_balanced(m, pair):
    """theta = (m + 1) + kappa, so the Gagliardo-Nirenberg ratio is scale invariant."""
    N, ell = pair
    theta, kappa = gn_exponents(N, ell, m)
    assert abs(theta - 2.0 * delta(N, ell, m)) < 1e-14
    assert abs(kappa - N * (1.0 - m) / (2.0 * ell)) < 1e-14
    assert abs(theta - (m + 1.0 + kappa)) < 1e-12


def test_eps_star_closed_form():
    alpha, d = 1.0, 0.75
    first = ((2 * d - 1) ** (-(2 * d - 1) / d) * (alpha * d) ** (1 / (1 - d))
             * (1 - d) ** ((2 * d - 1) / (d * (1 - d))))
    second = alpha * d * (1 - d)
    value = eps_star(alpha, d)
    assert abs(value - min(first, second)) <= 1e-12 * value
    assert abs(value - 0.012456) < 1e-5, f"eps_star(1, 0.75) = {value}"
    print(f"✓ eps_star(1, 0.75) = {value:.6f}")


@pytest.mark.parametrize("d", [0.5, 1.0, 1.2, 0.3])
def test_eps_star_domain(d):
    with pytest.raises(ValueError):
        eps_star(1.0, d)


def test_young_thresholds():
    x_star, y_star = young_thresholds(2.0, 0.75, 3.0)
    assert abs(x_star - (2.0 * 0.75 * 0.25 * 3.0) ** 4) < 1e-12
    assert abs(y_star - (2.0 * 0.75 ** 0.75 * 0.25) ** 4) < 1e-12


def test_extinction_exponents_assembly():
    a = make_dm_coefficient(0.5, 1.0)
    exps = extinction_exponents(1, 1, 0.5, a, c_gn=0.8, sup_grad=2.0)
    assert isinstance(exps, ExtinctionExponents)
    _, kappa = gn_exponents(1, 1, 0.5)
    assert abs(exps.alpha - a.imag / 0.8) < 1e-15
    assert abs(exps.alpha_ell - exps.alpha * 2.0 ** (-kappa)) < 1e-15
    assert exps.eps_star is not None and exps.eps_star > 0.0

    flat = extinction_exponents(2, 1, 0.5, a, c_gn=0.8, sup_grad=2.0)
    assert flat.delta == 1.0 and flat.eps_star is None
    assert exps.to_dict()['ell'] == 1

    with pytest.raises(CoefficientOutsideC):
        extinction_exponents(1, 1, 0.5, 1 - 1j, 0.8, 2.0)
    with pytest.raises(ValueError):
        extinction_exponents(1, 1, 0.5, a, 0.0, 2.0)


def test_smallness_check_verdicts():
    # alpha of a sine mode with a on D(1/2) at Re(a) = 20; y0 and the gradient
    # norm are those of the sine of amplitude 0.2 on the unit interval
    d = 0.875
    alpha = 8.79
    es = eps_star(alpha, d)
    assert es == pytest.approx(alpha * d * (1.0 - d))
    T0 = 1.0
    y0, grad = 0.02, 0.2 * math.pi / math.sqrt(2.0)
    assert y0 > EXTINCTION_CONFIG['mass_threshold']
    passing = smallness_check(y0, grad, 0.0, lambda t: 0.0, T0, es, d, alpha=alpha)
    assert passing.passed, passing.to_dict()
    assert passing.mass_lhs == pytest.approx(0.02 ** 0.125)
    assert passing.young_mass_ok is True

    big_mass = smallness_check(1.0, 0.0, 0.0, lambda t: 0.0, T0, es, d)
    assert not big_mass.mass_condition and big_mass.data_condition
    assert not big_mass.passed

    big_data = smallness_check(y0, 1.0, 0.0, lambda t: 0.0, T0, es, d)
    assert big_data.mass_condition and not big_data.data_condition

    loud = smallness_check(y0, grad, 0.0, lambda t: 1.0, T0, es, d)
    assert not loud.forcing_condition
    assert loud.worst_forcing_ratio == math.inf, "forcing alive at T0 violates the envelope"
    print("✓ smallness verdicts separate the three conditions")

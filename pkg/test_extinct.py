"""
Unit tests for the extinction analysis.
Envelopes against direct integration, detection, bounds, decay fits and
the vanishing monitor.
"""

import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coeff import make_dm_coefficient
from config import EXTINCTION_CONFIG
from evolve import ForcingSpec, MassLedger, TimeGrid, run
from extinct import (DegenerateFit, Envelope, EnvelopeParams, ExtinctionReport,
                     InsufficientData, bound_report, decay_fit, detect_extinction, envelope,
                     exponential_window, extinction_report, floor_curve,
                     gn_constant_estimate, gn_ratio, ode_extinction_time,
                     theoretical_exponent, vanishing_monitor, write_envelope_csv)
from grid import Field, GridSpec, PotentialSpec
from nonlin import AbsorptionParams

PARAMS = AbsorptionParams(0.5, make_dm_coefficient(0.5, 1.0), 1e-12)


def sine(spec, amplitude):
    x = spec.mesh()[0]
    return Field(amplitude * np.sin(math.pi * x / spec.lengths[0]), spec)


# ============================================================================
# ENVELOPES
# ============================================================================

def test_envelope_kinds():
    assert envelope(EnvelopeParams(1.0, 1.0, 0.75)).kind == 'finite'
    assert envelope(EnvelopeParams(1.0, 1.0, 1.0)).kind == 'exponential'
    assert envelope(EnvelopeParams(1.0, 1.0, 1.25)).kind == 'algebraic'
    with pytest.raises(ValueError):
        EnvelopeParams(1.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        EnvelopeParams(1.0, 0.0, 0.75)
    with pytest.raises(ValueError):
        EnvelopeParams(-1.0, 1.0, 0.75)


def test_finite_envelope_closed_form():
    env = Envelope(EnvelopeParams(y0=0.01, alpha_ell=0.5, delta=0.75, T0=1.0))
    T = 1.0 + 0.01 ** 0.25 / (2.0 * 0.5 * 0.25)
    assert abs(env.extinction_time - T) < 1e-14
    assert env(0.5) == pytest.approx(0.01, rel=1e-14), "flat before T0"
    assert isinstance(env(1.2), float)
    assert env(T + 1.0) == 0.0
    values = env(np.array([1.0, 1.5, T]))
    assert values.shape == (3,) and values[0] == pytest.approx(0.01)
    assert values[2] == pytest.approx(0.0, abs=1e-30)
    assert np.all(np.diff(values) <= 0.0)


def test_exponential_and_algebraic_envelopes():
    exp_env = Envelope(EnvelopeParams(2.0, 0.3, 1.0))
    assert exp_env.extinction_time == math.inf
    assert exp_env(1.0) == pytest.approx(2.0 * math.exp(-0.6))

    alg = Envelope(EnvelopeParams(1.0, 0.5, 1.5))
    assert alg.extinction_time == math.inf
    assert alg(2.0) == pytest.approx((1.0 + 2.0 * 0.5 * 0.5 * 2.0) ** -2.0)

    assert Envelope(EnvelopeParams(0.0, 1.0, 0.75, T0=3.0)).extinction_time == 3.0


def test_envelope_matches_direct_integration():
    """Closed-form extinction times agree with DOP853 integration to 1e-6."""
    rng = np.random.default_rng(0)
    for _ in range(20):
        d = rng.uniform(0.55, 0.95)
        alpha = rng.uniform(0.1, 10.0)
        y0 = rng.uniform(0.01, 10.0)
        closed = Envelope(EnvelopeParams(y0, alpha, d)).extinction_time
        integrated = ode_extinction_time(y0, alpha, d)
        assert abs(integrated - closed) <= 1e-6 * closed, \
            f"delta={d:.3f}, alpha={alpha:.3f}, y0={y0:.3f}: {integrated} vs {closed}"
    assert ode_extinction_time(0.0, 1.0, 0.75) == 0.0
    assert ode_extinction_time(1.0, 1.0, 1.0) == math.inf
    print("✓ closed-form extinction times match direct integration")


def test_floor_curve():
    floor = floor_curve(y0=0.01, T0=0.0, im_a=0.5, measure=2.0, m=0.5)
    assert floor.params.delta == 0.75
    expected = 0.01 ** 0.25 / (0.25 * 2.0 * 0.5 * 2.0 ** 0.25)
    assert floor.extinction_time == pytest.approx(expected, rel=1e-14)


# ============================================================================
# GAGLIARDO-NIRENBERG CONSTANT
# ============================================================================

@pytest.mark.parametrize("N,ell", [(1, 1), (2, 1), (3, 1), (3, 2)])
def test_gn_ratio_is_scale_invariant(N, ell):
    m = 0.4
    base = gn_ratio(0.7, 0.3, 2.0, N, ell, m)
    lam = 37.0
    scaled = gn_ratio(0.7 * lam ** 2, 0.3 * lam ** (m + 1.0), 2.0 * lam, N, ell, m)
    assert scaled == pytest.approx(base, rel=1e-12)


def test_gn_constant_estimate():
    ledger = MassLedger.from_columns(t=[0.0, 1.0, 2.0], mass=[1.0, 0.25, 0.0],
                                     lmp1=[0.5, 0.2, 0.0], h1=[3.0, 2.0, 0.0])
    expected = max(gn_ratio(1.0, 0.5, 3.0, 1, 1, 0.5), gn_ratio(0.25, 0.2, 2.0, 1, 1, 0.5))
    assert gn_constant_estimate(ledger, 0.5, 1) == pytest.approx(expected)

    dead = MassLedger.from_columns(t=[0.0], mass=[0.0])
    with pytest.raises(InsufficientData):
        gn_constant_estimate(dead, 0.5, 1)
    with pytest.raises(InsufficientData):
        gn_constant_estimate(MassLedger(), 0.5, 1)


# ============================================================================
# DETECTION
# ============================================================================

def test_detect_extinction():
    t = [0.0, 1.0, 2.0, 3.0, 4.0]
    assert detect_extinction(MassLedger.from_columns(t=t, mass=[1, 0.5, 1e-13, 0, 0])) == 2.0
    assert detect_extinction(MassLedger.from_columns(t=t, mass=[1, 1e-13, 1, 0.5, 0.1])) is None
    assert detect_extinction(MassLedger.from_columns(t=t, mass=[1, 1e-13, 2e-12, 0, 0])) == 3.0
    assert detect_extinction(MassLedger.from_columns(t=t, mass=[0.0] * 5)) == 0.0
    assert detect_extinction(MassLedger.from_columns(t=t, mass=[1e-6] * 5), threshold=1e-5) == 0.0
    assert detect_extinction(MassLedger()) is None


@settings(max_examples=200, deadline=None)
@given(mass=st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30),
       thresholds=st.tuples(st.floats(0.0, 1.0), st.floats(0.0, 1.0)))
def test_detect_extinction_is_monotone_in_threshold(mass, thresholds):
    """A higher threshold never delays the detected extinction time."""
    low, high = sorted(thresholds)
    ledger = MassLedger.from_columns(t=np.arange(len(mass), dtype=float), mass=mass)

    def time_of(threshold):
        T = detect_extinction(ledger, threshold)
        return math.inf if T is None else T

    assert time_of(high) <= time_of(low)


def test_report_json_uses_null_for_infinite_times():
    report = ExtinctionReport(T_num=None, envelope_ok=True, lower_bound=1.5,
                              upper_envelope_time=math.inf)
    data = json.loads(report.to_json())
    assert data['upper_envelope_time'] is None
    assert data['T_num'] is None and data['schema_version'] == 1


def test_bound_report_on_zero_state():
    ledger = MassLedger.from_columns(t=[0.0, 0.1], mass=[0.0, 0.0])
    report = bound_report(ledger, PARAMS, c_gn=1.0, N=1, measure=1.0)
    assert report.passed and report.T_num == 0.0
    with pytest.raises(InsufficientData):
        bound_report(ledger, PARAMS, c_gn=1.0, N=1, measure=1.0, T0=5.0)


@pytest.mark.slow
def test_extinction_in_one_dimension():
    """L = 2, u0 = 0.1 sin(pi x / 2), f = 0: extinct between the two bounds."""
    spec = GridSpec((2.0,), (64,))
    traj = run(sine(spec, 0.1), TimeGrid(2.5e-3, 2000), PARAMS, PotentialSpec.zero(spec),
               ForcingSpec.zero(spec), tol=1e-12)
    report = extinction_report(traj)
    assert report.T_num is not None, "no extinction within the horizon"
    assert report.lower_bound == pytest.approx(1.5043, rel=1e-3)
    bounds = report.bounds
    assert bounds.passed, bounds.to_dict()
    assert report.vanishing.status == 'extinct'
    print(f"✓ T_num = {report.T_num:.4f} >= lower bound {report.lower_bound:.4f}")


def test_extinction_report_short_run():
    spec = GridSpec((2.0,), (32,))
    traj = run(sine(spec, 0.1), TimeGrid(1e-2, 40), PARAMS, PotentialSpec.zero(spec),
               ForcingSpec.zero(spec))
    report = extinction_report(traj)
    assert report.c_gn is not None and report.c_gn > 0.0
    assert report.bounds.exponents.delta == 0.875
    data = json.loads(report.to_json())
    assert data['bounds']['lower_ok'] is True
    assert set(data) >= {'T_num', 'envelope_ok', 'lower_bound', 'upper_envelope_time'}


# ============================================================================
# DECAY FITS
# ============================================================================

def test_exponential_fit_recovers_rate():
    t = np.linspace(0.0, 5.0, 101)
    ledger = MassLedger.from_columns(t=t, mass=2.0 * np.exp(-0.8 * t))
    fit = decay_fit(ledger, 'exponential')
    assert fit.rate_or_exponent == pytest.approx(0.8, rel=1e-5)
    assert fit.r2 > 0.999999 and fit.points == 101

    lo, hi = exponential_window(ledger)
    assert 2.0 * math.exp(-0.8 * lo) <= 0.9 * 2.0
    assert 2.0 * math.exp(-0.8 * hi) >= 0.08 * 2.0
    assert lo < hi


def test_algebraic_fit_recovers_exponent():
    t = np.linspace(0.0, 50.0, 201)
    p, c = 1.5, 0.7
    ledger = MassLedger.from_columns(t=t, mass=(1.0 + c * t) ** (-2.0 * p))
    fit = decay_fit(ledger, 'algebraic', theoretical=1.5)
    assert fit.rate_or_exponent == pytest.approx(p, rel=1e-5)
    assert fit.scale == pytest.approx(c, rel=1e-3)
    assert fit.relative_error < 1e-5
    assert fit.to_dict()['kind'] == 'algebraic'


def test_algebraic_fit_on_three_dimensional_envelope():
    env = Envelope(EnvelopeParams(1.0, 0.5, 1.125))
    t = np.linspace(0.0, 40.0, 201)
    ledger = MassLedger.from_columns(t=t, mass=env(t))
    fit = decay_fit(ledger, 'algebraic', theoretical=theoretical_exponent(3, 1, 0.5))
    assert fit.rate_or_exponent == pytest.approx(4.0, rel=1e-5)
    assert fit.scale == pytest.approx(0.125, rel=1e-3)
    assert fit.relative_error <= EXTINCTION_CONFIG['exponent_slack']


def test_fit_window_stops_at_last_live_sample():
    """Entries after extinction (below threshold, above the fit floor) are left out."""
    t = np.linspace(0.0, 30.0, 151)
    p, c = 1.5, 0.7
    mass = (1.0 + c * t) ** (-2.0 * p)
    mass[101:] = 5e-13
    ledger = MassLedger.from_columns(t=t, mass=mass)
    fit = decay_fit(ledger, 'algebraic')
    assert fit.window[1] == pytest.approx(t[100])
    assert fit.points == 101
    assert fit.rate_or_exponent == pytest.approx(p, rel=1e-5)


def test_algebraic_fit_rejects_scale_on_search_bound():
    t = np.linspace(0.0, 10.0, 101)
    ledger = MassLedger.from_columns(t=t, mass=np.exp(-0.8 * t))
    with pytest.raises(DegenerateFit):
        decay_fit(ledger, 'algebraic')
    with pytest.raises(InsufficientData):
        decay_fit(ledger, 'algebraic')


def test_exponential_fit_on_delta_one_envelope():
    """delta = 1: the fitted rate of the envelope is 2 alpha_l."""
    alpha = 0.37
    env = Envelope(EnvelopeParams(0.5, alpha, 1.0))
    assert env.kind == 'exponential'
    t = np.linspace(0.0, 10.0, 201)
    fit = decay_fit(MassLedger.from_columns(t=t, mass=env(t)), 'exponential')
    assert abs(fit.rate_or_exponent - 2.0 * alpha) <= 1e-6


def test_fits_need_enough_points():
    ledger = MassLedger.from_columns(t=np.arange(5.0), mass=np.ones(5))
    with pytest.raises(InsufficientData):
        decay_fit(ledger, 'exponential')
    long = MassLedger.from_columns(t=np.arange(20.0), mass=np.exp(-np.arange(20.0)))
    with pytest.raises(ValueError):
        decay_fit(long, 'logarithmic')
    flat = MassLedger.from_columns(t=np.arange(20.0), mass=np.ones(20))
    with pytest.raises(InsufficientData):
        exponential_window(flat)


def test_theoretical_exponents():
    assert theoretical_exponent(3, 1, 0.5) == pytest.approx(4.0)
    assert theoretical_exponent(5, 2, 0.5) == pytest.approx(8.0)
    assert theoretical_exponent(2, 1, 0.5) is None
    assert theoretical_exponent(1, 1, 0.5) is None


# ============================================================================
# VANISHING AND FILES
# ============================================================================

def test_vanishing_monitor():
    spec = GridSpec((1.0,), (32,))
    forcing = ForcingSpec.windowed(sine(spec, 1.0), 1.0, 0.05, 1.0)
    traj = run(sine(spec, 0.5), TimeGrid(1e-2, 40), PARAMS, PotentialSpec.zero(spec), forcing,
               stride=5)
    report = vanishing_monitor(traj)
    assert report.status in ('vanishing', 'not_vanishing')
    assert report.decreasing['l2'] and report.below_half_horizon
    assert 'l4' in report.tails and 'mass_rate' in report.tails

    still_on = ForcingSpec.windowed(sine(spec, 1.0), 1.0, 10.0, 1.0)
    traj = run(sine(spec, 0.5), TimeGrid(1e-2, 5), PARAMS, PotentialSpec.zero(spec), still_on)
    assert vanishing_monitor(traj).status == 'inconclusive'

    tiny = run(sine(spec, 1e-10), TimeGrid(1e-2, 5), PARAMS, PotentialSpec.zero(spec),
               ForcingSpec.zero(spec))
    assert vanishing_monitor(tiny).status == 'extinct'


def test_write_envelope_csv(tmp_path):
    t = np.linspace(0.0, 1.0, 11)
    ledger = MassLedger.from_columns(t=t, mass=np.exp(-t))
    env = Envelope(EnvelopeParams(1.0, 0.5, 1.0))
    path = tmp_path / 'envelope.csv'
    write_envelope_csv(path, ledger, env, floor_curve(1.0, 0.0, 0.3, 1.0, 0.5))
    with open(path, newline='') as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 11 and list(rows[0]) == ['t', 'y_env', 'y_floor', 'y_ledger']
    assert float(rows[-1]['y_env']) == pytest.approx(math.exp(-1.0))

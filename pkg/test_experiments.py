"""
Tests for input builders, presets and single scenario runs.
"""

import json
import math
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from config import EXIT_CODES
from experiments import (CHECKS, RunContext, build_profile, build_run, load_presets, make_rng,
                         run_scenario)
from extinct import BoundReport
from grid import GridSpec
from runconfig import BadValue, pair_config, parse_config
from test_runconfig import minimal

PRESETS_FILE = Path(__file__).parent / 'config.json'


# ============================================================================
# BUILDERS
# ============================================================================

def test_streams_are_reproducible():
    a = make_rng(7, 0).standard_normal(5)
    assert np.array_equal(a, make_rng(7, 0).standard_normal(5))
    assert not np.array_equal(a, make_rng(7, 1).standard_normal(5))
    assert not np.array_equal(a, make_rng(8, 0).standard_normal(5))


def test_random_inputs_follow_the_seed():
    raw = minimal(seed=11, initial={'kind': 'random', 'amplitude': 0.5},
                  potential={'kind': 'random_split'})
    cfg = parse_config(raw)
    first, second = build_run(cfg), build_run(cfg)
    assert np.array_equal(first.u0.values, second.u0.values)
    assert np.array_equal(first.potential.values, second.potential.values)
    assert np.max(np.abs(first.u0.values)) == pytest.approx(0.5)
    assert not np.array_equal(build_run(cfg, role='pair').u0.values, first.u0.values)
    other = build_run(parse_config({**raw, 'seed': 12}))
    assert not np.array_equal(other.u0.values, first.u0.values)


def test_profiles():
    spec = GridSpec((1.0, 2.0), (7, 9))
    rng = make_rng(0)
    sine = build_profile({'kind': 'sine', 'amplitude': 2.0, 'modes': [1, 2]}, spec, rng)
    assert sine.values.shape == (63,)
    assert np.max(np.abs(sine.values)) <= 2.0

    gauss = build_profile({'kind': 'gaussian', 'amplitude': 1.0, 'width': 0.2,
                           'center': [0.5, 1.0], 'wavenumber': None}, spec, rng)
    peak = int(np.argmax(np.abs(gauss.values)))
    assert np.unravel_index(peak, spec.shape) == (3, 4)

    with pytest.raises(BadValue):
        build_profile({'kind': 'file', 'path': '/nonexistent/u.csv'}, spec, rng)


# ============================================================================
# PRESETS
# ============================================================================

def test_presets_load():
    presets = load_presets(PRESETS_FILE)
    assert {'mass-identity', 'extinction-1d', 'decay-2d', 'decay-3d', 'contraction-pair',
            'self-convergence', 'smallness', 'vanishing-1d', 'midpoint-1d',
            'random-potential-1d'} <= set(presets)
    for preset in presets.values():
        assert preset.theorem.strip() and preset.checks
        assert preset.config.name == preset.name
    assert presets['self-convergence'].config.steps == 20
    assert presets['decay-3d'].config.grid.unbounded_proxy
    partner = pair_config(presets['contraction-pair'].config)
    assert partner.initial['kind'] == 'gaussian'
    print(f"✓ {len(presets)} presets loaded")


def test_preset_without_theorem(tmp_path):
    path = tmp_path / 'presets.json'
    path.write_text(json.dumps({
        'defaults': minimal(),
        'scenarios': {'bare': {'description': 'no citation', 'theorem': ' ', 'checks': []}},
    }))
    with pytest.raises(BadValue):
        load_presets(path)


# ============================================================================
# SCENARIO RUNS
# ============================================================================

def test_run_scenario_writes_artifacts(tmp_path):
    cfg = parse_config(minimal(
        forcing={'kind': 'windowed', 'T0': 0.02},
        checks=['mass_identity', 'regularity', 'h1'],
    ))
    result = run_scenario(cfg, tmp_path)
    assert result.exit_code == 0, result.report
    for name in ('config.json', 'ledger.csv', 'final_state.csv', 'report.json', 'summary.txt'):
        assert (tmp_path / name).exists(), name
    report = json.loads((tmp_path / 'report.json').read_text())
    assert report['status'] == 'ok' and report['run']['steps_done'] == 5
    assert report['checks']['mass_identity']['passed']
    assert parse_config(tmp_path / 'config.json') == cfg
    assert 'check regularity: PASS' in (tmp_path / 'summary.txt').read_text()


def test_failed_check_exit_code(tmp_path):
    cfg = parse_config(minimal(checks=['extinction']))
    result = run_scenario(cfg, tmp_path)
    assert result.exit_code == 3
    assert result.report['checks']['extinction']['passed'] is False
    assert (tmp_path / 'envelope.csv').exists()


def test_solver_failure_exit_code(tmp_path):
    cfg = parse_config(minimal(solver={'tol': 1e-30, 'max_iter': 1}))
    result = run_scenario(cfg, tmp_path)
    assert result.exit_code == 2
    assert result.report['failed_step'] == 1
    assert (tmp_path / 'ledger.csv').exists(), "partial ledger is kept"


def test_same_seed_gives_identical_ledgers(tmp_path):
    cfg = parse_config(minimal(
        seed=5,
        initial={'kind': 'random', 'amplitude': 0.3},
        potential={'kind': 'random_split'},
        forcing={'kind': 'windowed', 'T0': 0.03},
        checks=['mass_identity'],
    ))
    first = run_scenario(cfg, tmp_path / 'first')
    second = run_scenario(cfg, tmp_path / 'second')
    assert first.exit_code == second.exit_code == 0
    assert (tmp_path / 'first' / 'ledger.csv').read_bytes() == \
        (tmp_path / 'second' / 'ledger.csv').read_bytes()
    assert (tmp_path / 'first' / 'final_state.csv').read_bytes() == \
        (tmp_path / 'second' / 'final_state.csv').read_bytes()


# ============================================================================
# CHECK VERDICTS
# ============================================================================

def _bounds_context(tmp_path, **overrides):
    fields = dict(T0=0.0, y0=0.1, T_num=1.5, lower_bound=0.4, upper_envelope_time=3.2,
                  lower_ok=True, upper_ok=True, envelope_ok=True, floor_ok=True,
                  max_envelope_ratio=0.8, min_floor_ratio=1.2)
    fields.update(overrides)
    return RunContext(None, None, None, tmp_path,
                      extinction=SimpleNamespace(bounds=BoundReport(**fields)))


@pytest.mark.parametrize("overrides,expected", [
    ({}, True),
    ({'upper_ok': False}, False),
    ({'floor_ok': False}, False),
    ({'lower_ok': False}, False),
    ({'envelope_ok': False}, False),
    ({'T_num': None}, False),
    ({'T_num': None, 'upper_envelope_time': math.inf}, True),
])
def test_bounds_verdict_needs_every_flag(tmp_path, overrides, expected):
    result = CHECKS['bounds'](_bounds_context(tmp_path, **overrides))
    assert result['passed'] is expected, result


def test_smallness_rejects_data_extinct_at_start(tmp_path):
    cfg = parse_config(minimal(
        coefficient={'m': 0.5, 're': 20.0},
        initial={'kind': 'sine', 'amplitude': 1e-38},
        analysis={'T0': 1.0},
        checks=['smallness'],
    ))
    result = run_scenario(cfg, tmp_path)
    check = result.report['checks']['smallness']
    assert check['T_num'] == 0.0
    assert check['extinct_by_T0'] is False and check['passed'] is False
    assert result.exit_code == EXIT_CODES['check_failure']


@pytest.mark.slow
def test_smallness_preset_goes_extinct_before_cutoff(tmp_path):
    preset = load_presets(PRESETS_FILE)['smallness']
    result = run_scenario(preset, tmp_path)
    check = result.report['checks']['smallness']
    assert result.exit_code == EXIT_CODES['ok'], check
    assert check['mass_condition'] and check['data_condition'] and check['forcing_condition']
    assert check['eps_star'] > 0.5
    assert 0.0 < check['T_num'] <= 1.05 * check['T0']


@pytest.mark.slow
def test_extinction_preset_meets_every_bound(tmp_path):
    preset = load_presets(PRESETS_FILE)['extinction-1d']
    result = run_scenario(preset, tmp_path)
    bounds = result.report['checks']['bounds']
    assert result.exit_code == EXIT_CODES['ok'], bounds
    assert bounds['lower_ok'] and bounds['upper_ok']
    assert bounds['envelope_ok'] and bounds['floor_ok']
    assert bounds['lower_bound'] <= bounds['T_num'] <= bounds['upper_envelope_time'] * 1.05

"""
Tests for parameter sweeps and the command line.
"""

import csv
import json
from pathlib import Path

from harness import main, sweep
from test_runconfig import minimal

PRESETS_FILE = Path(__file__).parent / 'config.json'


# ============================================================================
# SWEEPS
# ============================================================================

def test_dt_sweep_reports_order(tmp_path):
    base = minimal(time={'dt': 0.02, 'horizon': 0.1},
                   forcing={'kind': 'windowed', 'T0': 0.5, 'power': 2.0})
    rows = sweep(base, {'time.dt': [0.02, 0.01, 0.005]}, tmp_path)
    assert [r['exit_code'] for r in rows] == [0, 0, 0]
    assert rows[0]['order'] is None and rows[2]['order'] is not None
    with open(tmp_path / 'sweep.csv', newline='') as f:
        table = list(csv.DictReader(f))
    assert len(table) == 3 and table[1]['time.dt'] == '0.01'
    assert (tmp_path / 'point_002' / 'report.json').exists()


def test_sweep_records_bad_points(tmp_path):
    rows = sweep(minimal(), {'coefficient.m': [0.5, 1.5]}, tmp_path)
    assert rows[0]['exit_code'] == 0
    assert rows[1]['exit_code'] == 1 and rows[1]['status'] == 'config_error'
    assert rows[1]['error']


# ============================================================================
# COMMAND LINE
# ============================================================================

def test_cli_check_coefficient(capsys):
    assert main(['--quiet', 'check-coefficient', '--m', '0.5', '--re', '1']) == 0
    assert 'InD' in capsys.readouterr().out
    assert main(['--quiet', 'check-coefficient', '--m', '0.5', '--a', '1,-1']) == 0
    assert 'Outside' in capsys.readouterr().out


def test_cli_envelope(capsys):
    code = main(['--quiet', 'envelope', '--y0', '1', '--alpha', '1', '--delta', '0.75',
                 '--at', '0.5', '--numeric'])
    out = capsys.readouterr().out
    assert code == 0
    assert 'kind: finite' in out and 'extinction time: 2\n' in out
    assert 'numerical extinction time: 1.99999' in out


def test_cli_run_and_errors(tmp_path, capsys):
    good = tmp_path / 'good.json'
    good.write_text(json.dumps(minimal()))
    assert main(['--quiet', 'run', str(good), '--out', str(tmp_path / 'out')]) == 0
    assert 'scenario: custom' in capsys.readouterr().out

    bad = tmp_path / 'bad.json'
    bad.write_text(json.dumps(minimal(coefficient={'m': 0.5, 'a': [1.0, -1.0]})))
    assert main(['--quiet', 'run', str(bad)]) == 1
    assert main(['--quiet', '--presets-file', str(PRESETS_FILE), 'run', '--preset', 'nope']) == 1


def test_cli_presets(capsys):
    assert main(['--quiet', '--presets-file', str(PRESETS_FILE), 'presets']) == 0
    assert 'extinction-1d' in capsys.readouterr().out

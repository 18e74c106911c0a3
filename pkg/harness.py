"""
Experiment Harness
Author: Integration Engineer (Person 4)

Batch sweeps and the command-line entry point of the damped NLS extinction
lab. Configuration parsing lives in runconfig, scenario runs in experiments.

    python harness.py run config.json | --preset extinction-1d [--out DIR] [--plot]
    python harness.py sweep base.json --param time.dt=0.01,0.005,0.0025
    python harness.py presets
    python harness.py check-coefficient --m 0.5 --a 1,0.3535
    python harness.py envelope --y0 1 --alpha 1 --delta 0.75
"""

import copy
import csv
import itertools
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from coeff import CoefficientOutsideC, classify, make_dm_coefficient
from config import EXIT_CODES, HARNESS_CONFIG
from evolve import StepFailure
from experiments import ScenarioPreset, load_presets, run_scenario
from extinct import Envelope, EnvelopeParams, ode_extinction_time
from runconfig import BadValue, ConfigError, MissingKey, _load_raw, _parse_dict, parse_config
from stationary import NonConvergence

logger = logging.getLogger(__name__)


# ============================================================================
# SWEEPS
# ============================================================================

def _set_path(raw: Dict[str, Any], dotted: str, value: Any) -> None:
    keys = dotted.split('.')
    node = raw
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise BadValue(dotted, "path crosses a non-section value")
    node[keys[-1]] = value


def _sweep_point(index: int, raw: Dict[str, Any], out_dir: str) -> Tuple[Dict[str, Any], Any]:
    """One sweep point; failures are recorded, never raised"""
    row: Dict[str, Any] = {'index': index}
    try:
        cfg = _parse_dict(raw)
    except (ConfigError, CoefficientOutsideC) as exc:
        row.update({'exit_code': EXIT_CODES['config_error'], 'status': 'config_error',
                    'error': str(exc)})
        return row, None
    result = run_scenario(cfg, out_dir)
    report = result.report
    run = report.get('run') or {}
    extinction = report.get('extinction') or {}
    fit = extinction.get('fit') or {}
    row.update({
        'exit_code': result.exit_code,
        'status': report['status'],
        'T_num': extinction.get('T_num'),
        'fitted': fit.get('rate_or_exponent'),
        'max_identity_residual': run.get('max_identity_residual'),
        'final_mass': run.get('final_mass'),
    })
    final = None if result.final is None else np.array(result.final.values)
    return row, final


def _order_column(rows: List[Dict[str, Any]], finals: List[Any], dts: List[float],
                  spec_volume: float) -> None:
    """Observed temporal order along a dt sweep with a shared horizon"""
    order_idx = sorted(range(len(rows)), key=lambda i: -dts[i])
    diffs = {}
    for prev, cur in zip(order_idx, order_idx[1:]):
        if finals[prev] is None or finals[cur] is None:
            continue
        diffs[cur] = math.sqrt(spec_volume) * float(np.linalg.norm(finals[prev] - finals[cur]))
    for prev, cur in zip(order_idx[1:], order_idx[2:]):
        if prev in diffs and cur in diffs and diffs[prev] > 0.0 and diffs[cur] > 0.0:
            ratio = dts[prev] / dts[cur]
            rows[cur]['order'] = math.log(diffs[prev] / diffs[cur]) / math.log(ratio)


def sweep(base: Union[ScenarioPreset, str, Path, Dict[str, Any]],
          grid: Dict[str, Sequence[Any]], out_dir: Union[str, Path, None] = None,
          workers: Optional[int] = None) -> List[Dict[str, Any]]:
    """
    Run the cartesian product of a parameter grid over a base configuration.

    Args:
        base: Preset, config path/text or raw dict
        grid (dict): Dotted key path -> values, e.g. {'time.dt': [0.01, 0.005]}
        out_dir: Root directory; point i is written to out_dir/point_<i>
        workers (int): Process count (1 runs sequentially)

    Returns:
        list: One row per point; also written to out_dir/sweep.csv. A sweep
            over time.dt alone carries an observed-order column.
    """
    raw_base = base.raw if isinstance(base, ScenarioPreset) else _load_raw(base)
    name = raw_base.get('name', 'sweep')
    root = Path(out_dir or Path(HARNESS_CONFIG['output_root']) / f"{name}-sweep")
    root.mkdir(parents=True, exist_ok=True)
    workers = HARNESS_CONFIG['workers'] if workers is None else workers

    keys = list(grid)
    points = []
    for i, values in enumerate(itertools.product(*(grid[k] for k in keys))):
        raw = copy.deepcopy(raw_base)
        raw.pop('output', None)
        for key, value in zip(keys, values):
            _set_path(raw, key, value)
        raw['name'] = f"{name}-{i:03d}"
        points.append((i, raw, str(root / f"point_{i:03d}"), dict(zip(keys, values))))

    logger.info("sweep %s: %d points over %s with %d worker(s)", name, len(points), keys, workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_point, i, raw, d) for i, raw, d, _ in points]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = [_sweep_point(i, raw, d) for i, raw, d, _ in points]

    rows = []
    finals = []
    for (_, _, _, params), (row, final) in zip(points, outcomes):
        row.update(params)
        row.setdefault('order', None)
        rows.append(row)
        finals.append(final)

    if keys == ['time.dt'] and len(rows) >= 3:
        try:
            spec = _parse_dict(points[0][1]).grid
            _order_column(rows, finals, [p[3]['time.dt'] for p in points], spec.cell_volume)
        except ConfigError:
            pass

    columns = ['index'] + keys + ['exit_code', 'status', 'T_num', 'fitted',
                                  'max_identity_residual', 'final_mass', 'order', 'error']
    with open(root / 'sweep.csv', 'w', newline='') as f:
        writer = csv.DictWriter(f, fieldnames=columns, extrasaction='ignore')
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ('' if row.get(k) is None else row.get(k)) for k in columns})
    return rows


# ============================================================================
# COMMAND LINE
# ============================================================================

def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_param(spec: str) -> Tuple[str, List[Any]]:
    if '=' not in spec:
        raise BadValue(spec, "expected key=v1,v2,...")
    key, values = spec.split('=', 1)
    return key.strip(), [_parse_value(v.strip()) for v in values.split(',') if v.strip()]


def _preset(args) -> ScenarioPreset:
    presets = load_presets(args.presets_file)
    if args.preset not in presets:
        raise BadValue('preset', f"unknown preset {args.preset!r}; available: {sorted(presets)}")
    return presets[args.preset]


def _cmd_run(args) -> int:
    if args.preset:
        target = _preset(args)
    elif args.config:
        target = parse_config(args.config)
    else:
        raise MissingKey('config')
    result = run_scenario(target, args.out, plot=args.plot)
    print((result.out_dir / 'summary.txt').read_text(), end='')
    return result.exit_code


def _cmd_sweep(args) -> int:
    if args.preset:
        base = _preset(args)
    elif args.config:
        base = args.config
    else:
        raise MissingKey('config')
    grid = dict(_parse_param(p) for p in args.param)
    rows = sweep(base, grid, args.out, args.workers)
    for row in rows:
        print(', '.join(f"{k}={row.get(k)}" for k in ['index'] + list(grid)
                        + ['status', 'T_num', 'fitted', 'order']))
    failed = [r for r in rows if r.get('exit_code') != EXIT_CODES['ok']]
    return EXIT_CODES['ok'] if not failed else max(r.get('exit_code', 1) for r in failed)


def _cmd_presets(args) -> int:
    for name, preset in load_presets(args.presets_file).items():
        print(f"{name:20s} {preset.theorem}")
        print(f"{'':20s} {preset.description}")
        print(f"{'':20s} checks: {', '.join(preset.checks) or '-'}")
    return EXIT_CODES['ok']


def _cmd_check_coefficient(args) -> int:
    if args.re is not None:
        a = make_dm_coefficient(args.m, args.re)
    else:
        parts = [float(x) for x in args.a.split(',')]
        if len(parts) != 2:
            raise BadValue('a', "expected RE,IM")
        a = complex(parts[0], parts[1])
    print(f"a = {a.real:.12g}{a.imag:+.12g}i, m = {args.m:g}: {classify(a, args.m)}")
    return EXIT_CODES['ok']


def _cmd_envelope(args) -> int:
    env = Envelope(EnvelopeParams(args.y0, args.alpha, args.delta, args.t0))
    print(f"kind: {env.kind}")
    print(f"extinction time: {env.extinction_time:.12g}")
    if args.numeric:
        numeric = ode_extinction_time(args.y0, args.alpha, args.delta)
        print(f"numerical extinction time: {args.t0 + numeric:.12g}")
    for t in args.at or []:
        print(f"y({t:g}) = {env(t):.12g}")
    return EXIT_CODES['ok']


def build_parser():
    import argparse

    parser = argparse.ArgumentParser(description='Damped NLS extinction lab')
    parser.add_argument('--verbose', action='store_true')
    parser.add_argument('--quiet', action='store_true')
    parser.add_argument('--presets-file', default=HARNESS_CONFIG['presets_file'])
    sub = parser.add_subparsers(dest='command', required=True)

    run = sub.add_parser('run', help='run one configuration or preset')
    run.add_argument('config', nargs='?')
    run.add_argument('--preset')
    run.add_argument('--out')
    run.add_argument('--plot', action='store_true')
    run.set_defaults(func=_cmd_run)

    sw = sub.add_parser('sweep', help='run a parameter grid over a base configuration')
    sw.add_argument('config', nargs='?')
    sw.add_argument('--preset')
    sw.add_argument('--param', action='append', default=[], help='key=v1,v2,...')
    sw.add_argument('--workers', type=int, default=HARNESS_CONFIG['workers'])
    sw.add_argument('--out')
    sw.set_defaults(func=_cmd_sweep)

    pr = sub.add_parser('presets', help='list scenario presets')
    pr.set_defaults(func=_cmd_presets)

    cc = sub.add_parser('check-coefficient', help='classify a against C(m) and D(m)')
    cc.add_argument('--m', type=float, required=True)
    group = cc.add_mutually_exclusive_group(required=True)
    group.add_argument('--a', help='RE,IM')
    group.add_argument('--re', type=float, help='real part of a point on D(m)')
    cc.set_defaults(func=_cmd_check_coefficient)

    env = sub.add_parser('envelope', help='closed-form comparison envelope')
    env.add_argument('--y0', type=float, required=True)
    env.add_argument('--alpha', type=float, required=True)
    env.add_argument('--delta', type=float, required=True)
    env.add_argument('--t0', type=float, default=0.0)
    env.add_argument('--at', type=float, action='append')
    env.add_argument('--numeric', action='store_true')
    env.set_defaults(func=_cmd_envelope)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format='%(asctime)s %(name)s %(levelname)s: %(message)s')

    try:
        return args.func(args)
    except (ConfigError, CoefficientOutsideC) as exc:
        logger.error("configuration error: %s", exc)
        return EXIT_CODES['config_error']
    except (StepFailure, NonConvergence) as exc:
        logger.error("solver failure: %s", exc)
        return EXIT_CODES['solver_failure']
    except ValueError as exc:
        logger.error("invalid argument: %s", exc)
        return EXIT_CODES['config_error']


if __name__ == '__main__':
    sys.exit(main())

"""
Scenario Runs
Author: Integration Engineer (Person 4)

Turns a RunConfig into sampled inputs, runs the integrator, post-processes
the ledger and evaluates the checks attached to the run. Artifacts land in
one directory per scenario (config, ledger, envelope, report, summary).
"""

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.ndimage import gaussian_filter

from coeff import CoefficientOutsideC, delta, eps_star, smallness_check
from config import (EXIT_CODES, EXTINCTION_CONFIG, HARNESS_CONFIG, LEDGER_CONFIG,
                    REPORT_SCHEMA_VERSION, RUN_DEFAULTS)
from evolve import (ForcingSpec, NLSIntegrator, StepFailure, Trajectory,
                    contraction_check, h1_monitor, regularity_monitor, self_convergence)
from extinct import (Envelope, EnvelopeParams, InsufficientData, decay_fit, detect_extinction,
                     exponential_window, extinction_report, floor_curve, gn_ratio,
                     theoretical_exponent, write_envelope_csv)
from grid import (Field, GridMismatch, GridSpec, PotentialSpec, h1_seminorm, l2_norm,
                  lmp1_power, load_field, save_field_csv)
from nonlin import AbsorptionParams
from runconfig import (EXTINCTION_CHECKS, STREAMS, BadValue, ConfigError, MissingKey,
                       RunConfig, _deep_merge, _load_raw, _parse_dict, _Section, emit_config,
                       pair_config)

logger = logging.getLogger(__name__)


# ============================================================================
# BUILDERS
# ============================================================================

def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator; (seed, stream) fully determines the draws"""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


def _center(desc: Dict[str, Any], spec: GridSpec) -> List[float]:
    if desc.get('center') is not None:
        return desc['center']
    return [0.5 * L for L in spec.lengths]


def build_profile(desc: Dict[str, Any], spec: GridSpec, rng: np.random.Generator,
                  path: str = 'initial') -> Field:
    """Complex nodal field from an initial-data style description"""
    kind = desc['kind']
    X = spec.mesh()
    if kind == 'file':
        try:
            return load_field(desc['path'], spec)
        except (OSError, GridMismatch, ValueError, KeyError) as exc:
            raise BadValue(f"{path}.path", f"cannot load field: {exc}") from exc

    if kind == 'sine':
        modes = desc['modes'] or [1] * spec.N
        values = np.ones(spec.size)
        for x, k, L in zip(X, modes, spec.lengths):
            values = values * np.sin(math.pi * k * x / L)
        values = desc['amplitude'] * values.astype(np.complex128)
    elif kind == 'gaussian':
        c = _center(desc, spec)
        r2 = sum((x - ck) ** 2 for x, ck in zip(X, c))
        values = desc['amplitude'] * np.exp(-0.5 * r2 / desc['width'] ** 2)
        if desc['wavenumber'] is not None:
            phase = sum(k * x for k, x in zip(desc['wavenumber'], X))
            values = values * np.exp(1j * phase)
        values = values.astype(np.complex128)
    elif kind == 'random':
        raw = (rng.standard_normal(spec.shape) + 1j * rng.standard_normal(spec.shape))
        sigma = desc['smoothing']
        if sigma > 0.0:
            raw = (gaussian_filter(raw.real, sigma, mode='constant')
                   + 1j * gaussian_filter(raw.imag, sigma, mode='constant'))
        raw = raw.ravel()
        peak = np.max(np.abs(raw))
        values = desc['amplitude'] * raw / peak if peak > 0.0 else raw
    else:
        raise BadValue(f"{path}.kind", f"unknown profile kind {kind!r}")
    return Field(values.ravel(), spec)


def build_potential(desc: Dict[str, Any], spec: GridSpec,
                    rng: np.random.Generator, beta: float = RUN_DEFAULTS['beta']) -> PotentialSpec:
    kind = desc['kind']
    if kind == 'zero':
        return PotentialSpec.zero(spec)
    if kind == 'constant':
        return PotentialSpec.constant(spec, desc['value'])

    X = spec.mesh()
    c = _center(desc, spec)
    r2 = sum((x - ck) ** 2 for x, ck in zip(X, c))
    if kind == 'harmonic':
        v1 = -desc['omega'] * r2
        return PotentialSpec(v1.ravel(), np.zeros(spec.size), spec, beta=beta)
    if kind == 'random_split':
        v1 = desc['amplitude'] * rng.uniform(-1.0, 1.0, spec.size)
        v2 = desc['tail'] / (1.0 + r2 / desc['decay'] ** 2)
        return PotentialSpec(v1.ravel(), v2.ravel(), spec, beta=beta)
    raise BadValue('potential.kind', f"unknown potential kind {kind!r}")


def build_forcing(desc: Dict[str, Any], spec: GridSpec,
                  rng: np.random.Generator) -> ForcingSpec:
    kind = desc['kind']
    if kind == 'zero':
        return ForcingSpec.zero(spec)
    if kind == 'windowed':
        profile = build_profile(desc['profile'], spec, rng, 'forcing.profile')
        return ForcingSpec.windowed(profile, desc['amplitude'], desc['T0'], desc['power'])
    if kind == 'file':
        profile = build_profile({'kind': 'file', 'path': desc['path']}, spec, rng, 'forcing')
        return ForcingSpec.from_profile(profile, desc['T0'])
    raise BadValue('forcing.kind', f"unknown forcing kind {kind!r}")


@dataclass
class RunInputs:
    spec: GridSpec
    params: AbsorptionParams
    potential: PotentialSpec
    u0: Field
    forcing: ForcingSpec


def build_run(cfg: RunConfig, role: str = 'initial') -> RunInputs:
    """Sample potential, initial data and forcing; randomness flows from cfg.seed"""
    spec = cfg.grid
    u0_stream = STREAMS['pair'] if role == 'pair' else STREAMS['initial']
    return RunInputs(
        spec=spec,
        params=cfg.params,
        potential=build_potential(cfg.potential, spec, make_rng(cfg.seed, STREAMS['potential'])),
        u0=build_profile(cfg.initial, spec, make_rng(cfg.seed, u0_stream)),
        forcing=build_forcing(cfg.forcing, spec, make_rng(cfg.seed, STREAMS['forcing'])),
    )


def _integrator(cfg: RunConfig, inputs: RunInputs, dt: Optional[float] = None) -> NLSIntegrator:
    return NLSIntegrator(inputs.spec, inputs.params, inputs.potential, inputs.forcing,
                         cfg.dt if dt is None else dt, tol=cfg.tol, max_iter=cfg.max_iter,
                         method=cfg.method, scheme=cfg.scheme)


# ============================================================================
# PRESETS
# ============================================================================

@dataclass
class ScenarioPreset:
    """Named experiment: a run template plus the checks that apply to it"""
    name: str
    description: str
    theorem: str
    checks: Tuple[str, ...]
    config: RunConfig
    raw: Dict[str, Any] = field(default_factory=dict)


def load_presets(path: Union[str, Path, None] = None) -> Dict[str, ScenarioPreset]:
    """
    Load every scenario of the presets file, merged over its defaults section.

    Raises:
        BadValue: Duplicate names, missing theorem citation or invalid template
    """
    path = HARNESS_CONFIG['presets_file'] if path is None else path
    doc = _load_raw(Path(path))
    defaults = doc.get('defaults', {})
    scenarios = doc.get('scenarios')
    if not isinstance(scenarios, dict) or not scenarios:
        raise MissingKey('scenarios')

    presets = {}
    for name, entry in scenarios.items():
        section = _Section(entry, f"scenarios.{name}")
        description = section.string('description')
        theorem = section.string('theorem')
        if not theorem.strip():
            raise BadValue(section.key('theorem'), "every preset must cite its theorem")
        checks = section.get('checks', [])
        overrides = section.get('config', {})
        section.finish()

        raw = _deep_merge(defaults, overrides)
        raw['name'] = name
        raw['checks'] = checks
        try:
            cfg = _parse_dict(raw)
        except ConfigError as exc:
            raise BadValue(f"scenarios.{name}.config.{exc.key}", str(exc)) from exc
        presets[name] = ScenarioPreset(name, description, theorem, cfg.checks, cfg, raw)
    return presets


# ============================================================================
# CHECKS
# ============================================================================

@dataclass
class RunContext:
    """State shared by the post-processing checks of one scenario"""
    cfg: RunConfig
    inputs: RunInputs
    traj: Trajectory
    out_dir: Path
    extinction: Optional[Any] = None
    fit: Optional[Any] = None
    fit_error: Optional[str] = None
    envelope: Optional[Tuple[Envelope, Envelope]] = None


def _check_mass_identity(ctx: RunContext) -> Dict[str, Any]:
    worst = ctx.traj.ledger.max_identity_residual
    limit = LEDGER_CONFIG['identity_factor'] * ctx.cfg.tol
    if ctx.cfg.scheme != 'implicit_euler':
        return {'passed': True, 'diagnostic': True, 'max_identity_residual': worst}
    return {'passed': worst <= limit, 'max_identity_residual': worst, 'limit': limit}


def _check_extinction(ctx: RunContext) -> Dict[str, Any]:
    T_num = ctx.extinction.T_num
    return {'passed': T_num is not None, 'T_num': T_num}


def _check_bounds(ctx: RunContext) -> Dict[str, Any]:
    bounds = ctx.extinction.bounds
    if bounds is None:
        return {'passed': False, 'reason': 'no usable ledger entry for the GN constant'}
    result = bounds.to_dict()
    # an envelope without a finite extinction time predicts none
    expects_extinction = math.isfinite(bounds.upper_envelope_time)
    result['passed'] = bool((bounds.T_num is not None or not expects_extinction)
                            and bounds.passed)
    return result


def _check_exponential_fit(ctx: RunContext) -> Dict[str, Any]:
    if ctx.fit is None or ctx.fit.kind != 'exponential':
        return {'passed': False, 'reason': ctx.fit_error or 'no exponential fit'}
    ledger = ctx.traj.ledger
    t = ledger.column('t')
    y = ledger.column('mass')
    lo, hi = ctx.fit.window
    decades = math.log10(np.interp(lo, t, y) / np.interp(hi, t, y))
    result = ctx.fit.to_dict()
    result['decades'] = decades
    result['passed'] = bool(ctx.fit.r2 >= 0.99 and decades >= 1.0)
    return result


def _check_algebraic_fit(ctx: RunContext) -> Dict[str, Any]:
    if ctx.fit is None or ctx.fit.kind != 'algebraic':
        return {'passed': False, 'reason': ctx.fit_error or 'no algebraic fit'}
    result = ctx.fit.to_dict()
    err = ctx.fit.relative_error
    result['passed'] = bool(err is not None and err <= EXTINCTION_CONFIG['exponent_slack'])
    return result


def _check_contraction(ctx: RunContext) -> Dict[str, Any]:
    partner_cfg = pair_config(ctx.cfg)
    if (partner_cfg.grid, partner_cfg.dt, partner_cfg.steps, partner_cfg.scheme) != \
            (ctx.cfg.grid, ctx.cfg.dt, ctx.cfg.steps, ctx.cfg.scheme):
        raise BadValue('pair', "pair overrides may only change initial data and forcing")
    partner_inputs = build_run(partner_cfg, role='pair')
    partner = _integrator(partner_cfg, partner_inputs).run(
        partner_inputs.u0, partner_cfg.steps, stride=ctx.cfg.stride,
        ledger_path=ctx.out_dir / 'ledger_pair.csv')
    report = contraction_check(ctx.traj, partner)
    result = report.to_dict()
    logger.info("contraction: max excess %.3e (slack %.3e)", report.max_excess, report.slack)
    return result


def _check_smallness(ctx: RunContext) -> Dict[str, Any]:
    cfg = ctx.cfg
    spec = ctx.inputs.spec
    u0 = ctx.inputs.u0.values
    ell = cfg.analysis['ell']
    T0 = cfg.analysis['T0'] or ctx.inputs.forcing.T0
    if not T0:
        return {'passed': False, 'reason': 'smallness needs analysis.T0 or a forcing cutoff'}
    try:
        d = delta(spec.N, ell, cfg.m)
        y0 = l2_norm(u0, spec) ** 2
        unit = u0 / math.sqrt(y0)
        c_gn = gn_ratio(1.0, lmp1_power(unit, spec, cfg.m), h1_seminorm(unit, spec),
                        spec.N, ell, cfg.m)
        alpha = cfg.a.imag / c_gn
        threshold = eps_star(alpha, d)
    except (ValueError, ZeroDivisionError) as exc:
        return {'passed': False, 'reason': str(exc)}

    forcing = ctx.inputs.forcing
    k_max = min(cfg.steps, int(math.floor(T0 / cfg.dt)))
    budget = sum(cfg.dt * forcing.norm(k * cfg.dt) for k in range(1, k_max + 1))
    report = smallness_check(y0, h1_seminorm(u0, spec), budget, forcing.norm, T0,
                             threshold, d, alpha=alpha)
    T_num = detect_extinction(ctx.traj.ledger)
    early = (T_num is not None
             and 0.0 < T_num <= T0 * (1.0 + EXTINCTION_CONFIG['bound_slack']))
    result = report.to_dict()
    result.update({'c_gn': c_gn, 'alpha': alpha, 'eps_star': threshold, 'T0': T0,
                   'T_num': T_num, 'extinct_by_T0': early,
                   'passed': bool(report.passed and early)})
    return result


def _check_h1(ctx: RunContext) -> Dict[str, Any]:
    return h1_monitor(ctx.traj).to_dict()


def _check_regularity(ctx: RunContext) -> Dict[str, Any]:
    report = regularity_monitor(ctx.traj)
    result = report.to_dict()
    result['passed'] = bool(report.mass_bound_ok and report.velocity_bound_ok)
    return result


def _check_vanishing(ctx: RunContext) -> Dict[str, Any]:
    report = ctx.extinction.vanishing
    result = report.to_dict()
    result['passed'] = report.status in ('extinct', 'vanishing')
    return result


def _check_self_convergence(ctx: RunContext) -> Dict[str, Any]:
    cfg = ctx.cfg
    horizon = cfg.steps * cfg.dt
    inputs = ctx.inputs

    def final_state(dt: float) -> Field:
        steps = int(round(horizon / dt))
        return _integrator(cfg, inputs, dt).run(inputs.u0, steps, stride=steps or 1).final

    report = self_convergence(final_state, cfg.dt, levels=3)
    order = report.observed_order
    return {'passed': bool(order is not None and abs(order - 1.0) <= 0.2),
            'order': order, 'differences': report.differences, 'dts': report.parameters}


CHECKS = {
    'mass_identity': _check_mass_identity,
    'extinction': _check_extinction,
    'bounds': _check_bounds,
    'exponential_fit': _check_exponential_fit,
    'algebraic_fit': _check_algebraic_fit,
    'contraction': _check_contraction,
    'smallness': _check_smallness,
    'h1': _check_h1,
    'regularity': _check_regularity,
    'vanishing': _check_vanishing,
    'self_convergence': _check_self_convergence,
}


# ============================================================================
# SCENARIOS
# ============================================================================

@dataclass
class ScenarioResult:
    name: str
    exit_code: int
    out_dir: Path
    report: Dict[str, Any]
    final: Optional[Field] = None


def _jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become null"""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    if isinstance(value, complex):
        return [value.real, value.imag]
    return value


def _write_summary(path: Path, report: Dict[str, Any]) -> None:
    lines = [
        f"scenario: {report['name']}",
        f"status: {report['status']} (exit {report['exit_code']})",
        f"coefficient: a = {report['a'][0]:.6g}{report['a'][1]:+.6g}i, m = {report['m']:g} "
        f"({report['classification']})",
    ]
    run = report.get('run')
    if run:
        lines += [
            f"steps: {run['steps_done']} of dt = {run['dt']:g} ({run['scheme']})",
            f"final mass: {run['final_mass']:.6e}",
            f"max identity residual: {run['max_identity_residual']:.3e}",
            f"newton iterations: {run['iterations']} (fallbacks {run['fallbacks']})",
        ]
    extinction = report.get('extinction')
    if extinction:
        lines.append(f"T_num: {extinction['T_num']}")
        lines.append(f"lower bound: {extinction['lower_bound']}")
    if report.get('error'):
        lines.append(f"error: {report['error']}")
    for name, result in report.get('checks', {}).items():
        lines.append(f"check {name}: {'PASS' if result.get('passed') else 'FAIL'}")
    path.write_text('\n'.join(lines) + '\n')


def _finish(out_dir: Path, report: Dict[str, Any], code: int, status: str) -> Dict[str, Any]:
    report['exit_code'] = code
    report['status'] = status
    report = _jsonable(report)
    with open(out_dir / 'report.json', 'w') as f:
        json.dump(report, f, indent=2, allow_nan=False)
    _write_summary(out_dir / 'summary.txt', report)
    return report


def _analyse(ctx: RunContext) -> None:
    cfg = ctx.cfg
    traj = ctx.traj
    T0 = ctx.inputs.forcing.T0 or 0.0
    ell = cfg.analysis['ell']
    try:
        ctx.extinction = extinction_report(traj, ell=ell)
    except InsufficientData as exc:
        logger.warning("extinction analysis skipped: %s", exc)
        return

    fit_kind = cfg.analysis['fit']
    if fit_kind is None and 'exponential_fit' in cfg.checks:
        fit_kind = 'exponential'
    if fit_kind is None and 'algebraic_fit' in cfg.checks:
        fit_kind = 'algebraic'
    window = cfg.analysis['window']
    try:
        if fit_kind == 'exponential':
            window = tuple(window) if window else exponential_window(traj.ledger, T0)
            ctx.fit = decay_fit(traj.ledger, 'exponential', window, T0)
        elif fit_kind == 'algebraic':
            ctx.fit = decay_fit(traj.ledger, 'algebraic', tuple(window) if window else None,
                                T0, theoretical_exponent(traj.spec.N, ell, cfg.m))
    except InsufficientData as exc:
        ctx.fit_error = str(exc)
        logger.warning("decay fit skipped: %s", exc)
    ctx.extinction.fit = ctx.fit

    bounds = ctx.extinction.bounds
    if bounds is not None and bounds.exponents is not None and bounds.y0 > 0.0:
        env = Envelope(EnvelopeParams(bounds.y0, bounds.exponents.alpha_ell,
                                      bounds.exponents.delta, bounds.T0, ell))
        floor = floor_curve(bounds.y0, bounds.T0, cfg.a.imag, traj.spec.measure, cfg.m)
        write_envelope_csv(ctx.out_dir / 'envelope.csv', traj.ledger, env, floor)
        ctx.envelope = (env, floor)


def run_scenario(preset_or_config: Union[ScenarioPreset, RunConfig],
                 out_dir: Union[str, Path, None] = None, plot: bool = False) -> ScenarioResult:
    """
    Run one scenario and write its artifacts.

    Writes config.json, ledger.csv, report.json, summary.txt and final_state.csv
    (plus envelope.csv when extinction checks ran, and PNG figures with plot).

    Returns:
        ScenarioResult: exit code 0 when every attached check passes, 2 on a
            solver failure, 3 on a failed check, 1 on a configuration error
    """
    cfg = (preset_or_config.config if isinstance(preset_or_config, ScenarioPreset)
           else preset_or_config)
    out = Path(out_dir or cfg.output_dir or Path(HARNESS_CONFIG['output_root']) / cfg.name)
    out.mkdir(parents=True, exist_ok=True)
    (out / 'config.json').write_text(emit_config(cfg))

    report: Dict[str, Any] = {
        'schema_version': REPORT_SCHEMA_VERSION,
        'name': cfg.name,
        'm': cfg.m,
        'a': cfg.a,
        'classification': cfg.classification,
        'grid': cfg.grid.to_dict(),
    }
    logger.info("scenario %s: %d steps, checks %s", cfg.name, cfg.steps, list(cfg.checks))

    try:
        inputs = build_run(cfg)
        integrator = _integrator(cfg, inputs)
    except (ConfigError, CoefficientOutsideC) as exc:
        report['error'] = str(exc)
        return ScenarioResult(cfg.name, EXIT_CODES['config_error'], out,
                              _finish(out, report, EXIT_CODES['config_error'], 'config_error'))

    try:
        traj = integrator.run(inputs.u0, cfg.steps, stride=cfg.stride,
                              ledger_path=out / 'ledger.csv')
    except StepFailure as exc:
        logger.error("scenario %s: %s", cfg.name, exc)
        report['error'] = str(exc)
        report['failed_step'] = exc.step
        return ScenarioResult(cfg.name, EXIT_CODES['solver_failure'], out,
                              _finish(out, report, EXIT_CODES['solver_failure'],
                                      'solver_failure'))

    save_field_csv(out / 'final_state.csv', traj.final)
    ledger = traj.ledger
    report['run'] = {
        'dt': cfg.dt,
        'scheme': cfg.scheme,
        'steps_done': traj.steps_done,
        'iterations': int(sum(traj.iterations)),
        'fallbacks': traj.fallbacks,
        'final_mass': ledger[-1].mass,
        'max_identity_residual': ledger.max_identity_residual,
        'extinct_at': traj.extinct_at,
    }

    ctx = RunContext(cfg, inputs, traj, out)
    if EXTINCTION_CHECKS & set(cfg.checks) or cfg.analysis['fit']:
        _analyse(ctx)
        if ctx.extinction is not None:
            report['extinction'] = ctx.extinction.to_dict()

    results = {}
    try:
        for name in cfg.checks:
            if name in EXTINCTION_CHECKS and ctx.extinction is None:
                results[name] = {'passed': False, 'reason': 'extinction analysis unavailable'}
                continue
            results[name] = CHECKS[name](ctx)
            logger.info("check %s: %s", name, 'pass' if results[name]['passed'] else 'FAIL')
    except StepFailure as exc:
        report['checks'] = results
        report['error'] = str(exc)
        return ScenarioResult(cfg.name, EXIT_CODES['solver_failure'], out,
                              _finish(out, report, EXIT_CODES['solver_failure'],
                                      'solver_failure'), traj.final)
    except ConfigError as exc:
        report['checks'] = results
        report['error'] = str(exc)
        return ScenarioResult(cfg.name, EXIT_CODES['config_error'], out,
                              _finish(out, report, EXIT_CODES['config_error'],
                                      'config_error'), traj.final)
    report['checks'] = results

    if plot:
        import plotting
        plotting.plot_ledger(ledger, out / 'mass.png', title=cfg.name)
        if ctx.envelope:
            env, floor = ctx.envelope
            plotting.plot_envelope(ledger, env, floor, out / 'envelope.png', title=cfg.name)

    passed = all(r['passed'] for r in results.values())
    code = EXIT_CODES['ok'] if passed else EXIT_CODES['check_failure']
    final_report = _finish(out, report, code, 'ok' if passed else 'check_failure')
    return ScenarioResult(cfg.name, code, out, final_report, traj.final)

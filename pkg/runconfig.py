"""
Run Configuration
Author: Integration Engineer (Person 4)

JSON run descriptions for the damped NLS extinction lab: typed section
readers, kind schemas for initial data, potentials and forcing, and the
RunConfig they parse into. Every error carries the dotted key path.
"""

import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from coeff import CoefficientOutsideC, classify, make_dm_coefficient, require_cone
from config import RUN_DEFAULTS, SCHEMES, SOLVER_CONFIG
from evolve import TimeGrid
from grid import GridSpec
from nonlin import AbsorptionParams

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid run configuration; carries the dotted key path"""

    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key or '<root>'}: {message}")


class MissingKey(ConfigError):
    def __init__(self, key: str):
        super().__init__(key, "required key is missing")


class BadValue(ConfigError):
    pass


# ============================================================================
# DESCRIPTION SCHEMAS
# ============================================================================

REQUIRED = object()

POTENTIAL_KINDS = {
    'zero': {},
    'constant': {'value': 0.0},
    'harmonic': {'omega': 1.0, 'center': None},
    'random_split': {'amplitude': 1.0, 'tail': 1.0, 'decay': 1.0},
}

PROFILE_KINDS = {
    'gaussian': {'amplitude': 1.0, 'width': 0.1, 'center': None, 'wavenumber': None},
    'sine': {'amplitude': 1.0, 'modes': None},
    'random': {'amplitude': 1.0, 'smoothing': 2.0},
    'file': {'path': REQUIRED},
}

FORCING_KINDS = {
    'zero': {},
    'windowed': {'amplitude': 1.0, 'T0': REQUIRED, 'power': 1.0,
                 'profile': {'kind': 'sine'}},
    'file': {'path': REQUIRED, 'T0': None},
}

CHECK_NAMES = (
    'mass_identity', 'extinction', 'bounds', 'exponential_fit', 'algebraic_fit',
    'contraction', 'smallness', 'h1', 'regularity', 'vanishing', 'self_convergence',
)

EXTINCTION_CHECKS = {'extinction', 'bounds', 'exponential_fit', 'algebraic_fit', 'vanishing'}

# Independent random streams derived from the run seed
STREAMS = {'initial': 0, 'potential': 1, 'forcing': 2, 'pair': 3}


class _Section:
    """Typed reader over one config section that rejects unknown keys on finish()"""

    def __init__(self, raw: Any, path: str):
        if not isinstance(raw, dict):
            raise BadValue(path, f"expected a section, got {type(raw).__name__}")
        self.raw = raw
        self.path = path
        self.used = set()

    def key(self, name: str) -> str:
        return f"{self.path}.{name}" if self.path else name

    def has(self, name: str) -> bool:
        return name in self.raw

    def get(self, name: str, default: Any = REQUIRED) -> Any:
        self.used.add(name)
        if name not in self.raw:
            if default is REQUIRED:
                raise MissingKey(self.key(name))
            return copy.deepcopy(default)
        return self.raw[name]

    def number(self, name: str, default: Any = REQUIRED) -> Optional[float]:
        value = self.get(name, default)
        if value is None:
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise BadValue(self.key(name), f"expected a number, got {value!r}")
        if not math.isfinite(value):
            raise BadValue(self.key(name), f"expected a finite number, got {value!r}")
        return float(value)

    def integer(self, name: str, default: Any = REQUIRED) -> int:
        value = self.get(name, default)
        if isinstance(value, bool) or not isinstance(value, int):
            raise BadValue(self.key(name), f"expected an integer, got {value!r}")
        return value

    def flag(self, name: str, default: bool) -> bool:
        value = self.get(name, default)
        if not isinstance(value, bool):
            raise BadValue(self.key(name), f"expected true/false, got {value!r}")
        return value

    def string(self, name: str, default: Any = REQUIRED,
               choices: Optional[Sequence[str]] = None) -> Optional[str]:
        value = self.get(name, default)
        if value is None:
            return None
        if not isinstance(value, str):
            raise BadValue(self.key(name), f"expected a string, got {value!r}")
        if choices is not None and value not in choices:
            raise BadValue(self.key(name), f"expected one of {list(choices)}, got {value!r}")
        return value

    def numbers(self, name: str, default: Any = REQUIRED,
                length: Optional[int] = None) -> Optional[List[float]]:
        value = self.get(name, default)
        if value is None:
            return None
        if not isinstance(value, list) or any(
                isinstance(x, bool) or not isinstance(x, (int, float)) for x in value):
            raise BadValue(self.key(name), f"expected a list of numbers, got {value!r}")
        if length is not None and len(value) != length:
            raise BadValue(self.key(name), f"expected {length} entries, got {len(value)}")
        return [float(x) for x in value]

    def finish(self) -> None:
        unknown = sorted(set(self.raw) - self.used)
        if unknown:
            raise BadValue(self.key(unknown[0]), "unknown key")


def _description(raw: Any, path: str, kinds: Dict[str, Dict[str, Any]], N: int,
                 default_kind: Optional[str] = None) -> Dict[str, Any]:
    """Validate a {kind: ..., params...} description and fill its defaults"""
    section = _Section(raw, path)
    kind = section.string('kind', default_kind if default_kind else REQUIRED,
                          choices=tuple(kinds))
    out = {'kind': kind}
    for name, default in kinds[kind].items():
        if name == 'profile':
            out[name] = _description(section.get(name, default), section.key(name),
                                     PROFILE_KINDS, N)
        elif name == 'path':
            out[name] = section.string(name, default)
        elif name in ('center', 'wavenumber'):
            out[name] = section.numbers(name, default, length=N)
        elif name == 'modes':
            modes = section.get(name, default)
            if modes is not None and (not isinstance(modes, list) or len(modes) != N
                                      or any(isinstance(k, bool) or not isinstance(k, int)
                                             or k < 1 for k in modes)):
                raise BadValue(section.key(name), f"expected {N} positive integers")
            out[name] = modes
        else:
            out[name] = section.number(name, default)
    section.finish()
    for name in ('width', 'decay'):
        if name in out and not out[name] > 0.0:
            raise BadValue(section.key(name), "must be positive")
    if out.get('T0') is not None and out['T0'] < 0.0:
        raise BadValue(section.key('T0'), "must be nonnegative")
    return out


# ============================================================================
# RUN CONFIGURATION
# ============================================================================

@dataclass
class RunConfig:
    """Validated description of one run; emit_config/parse_config round-trip it"""
    grid: GridSpec
    m: float
    a: complex
    eps: float
    initial: Dict[str, Any]
    potential: Dict[str, Any]
    forcing: Dict[str, Any]
    dt: float
    steps: int
    horizon: Optional[float] = None
    stride: int = 1
    scheme: str = 'implicit_euler'
    tol: float = 1e-10
    max_iter: int = 60
    method: Optional[str] = None
    output_dir: Optional[str] = None
    checks: Tuple[str, ...] = ()
    analysis: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    pair: Optional[Dict[str, Any]] = None
    name: str = 'custom'

    @property
    def params(self) -> AbsorptionParams:
        return AbsorptionParams(self.m, self.a, self.eps)

    @property
    def time_grid(self) -> TimeGrid:
        return TimeGrid(self.dt, self.steps)

    @property
    def classification(self) -> str:
        return classify(self.a, self.m)


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict) and 'kind' not in value:
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _unique_keys(pairs):
    seen = {}
    for key, value in pairs:
        if key in seen:
            raise BadValue(key, "duplicate key")
        seen[key] = value
    return seen


def _load_raw(source: Union[str, Path, Dict[str, Any]]) -> Dict[str, Any]:
    if isinstance(source, dict):
        return copy.deepcopy(source)
    text = str(source)
    try:
        if isinstance(source, Path) or not text.lstrip().startswith('{'):
            with open(text, 'r') as f:
                text = f.read()
        raw = json.loads(text, object_pairs_hook=_unique_keys)
    except OSError as exc:
        raise BadValue('', f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BadValue('', f"invalid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise BadValue('', "config must be a JSON object")
    return raw


def _parse_dict(raw: Dict[str, Any]) -> RunConfig:
    root = _Section(raw, '')
    name = root.string('name', 'custom')
    seed = root.integer('seed', RUN_DEFAULTS['seed'])
    if seed < 0:
        raise BadValue('seed', "must be nonnegative")

    g = _Section(root.get('grid'), 'grid')
    counts = g.get('counts')
    if not isinstance(counts, list) or any(isinstance(n, bool) or not isinstance(n, int)
                                           for n in counts):
        raise BadValue('grid.counts', f"expected a list of integers, got {counts!r}")
    lengths = g.numbers('lengths', [1.0] * len(counts))
    proxy = g.flag('unbounded_proxy', False)
    g.finish()
    try:
        spec = GridSpec(tuple(lengths), tuple(counts), proxy)
    except ValueError as exc:
        raise BadValue('grid', str(exc)) from exc
    N = spec.N

    c = _Section(root.get('coefficient'), 'coefficient')
    m = c.number('m')
    eps = c.number('eps', RUN_DEFAULTS['eps'])
    if c.has('re') and c.has('a'):
        raise BadValue('coefficient', "give either 're' (critical ray) or 'a', not both")
    try:
        if c.has('a'):
            re_im = c.numbers('a', length=2)
            a = complex(re_im[0], re_im[1])
            AbsorptionParams(m, a, eps)
        else:
            a = make_dm_coefficient(m, c.number('re'))
            AbsorptionParams(m, a, eps)
    except (ConfigError, CoefficientOutsideC):
        raise
    except ValueError as exc:
        raise BadValue('coefficient', str(exc)) from exc
    c.finish()
    label = require_cone(a, m)
    logger.info("coefficient a = %s classified %s for m = %g", a, label, m)

    initial = _description(root.get('initial'), 'initial', PROFILE_KINDS, N)
    potential = _description(root.get('potential', {'kind': 'zero'}), 'potential',
                             POTENTIAL_KINDS, N)
    forcing = _description(root.get('forcing', {'kind': 'zero'}), 'forcing',
                           FORCING_KINDS, N)

    t = _Section(root.get('time'), 'time')
    dt = t.number('dt')
    if not dt > 0.0:
        raise BadValue('time.dt', "must be positive")
    # a null entry counts as absent so presets can switch from steps to horizon
    steps_given = t.get('steps', None) is not None
    horizon = t.number('horizon', None)
    if steps_given == (horizon is not None):
        raise BadValue('time', "give exactly one of 'steps' and 'horizon'")
    if horizon is not None:
        steps = int(round(horizon / dt))
        if horizon <= 0.0 or abs(steps * dt - horizon) > 1e-9 * horizon:
            raise BadValue('time.horizon', f"{horizon} is not a positive multiple of dt = {dt}")
    else:
        steps = t.integer('steps')
        if steps < 0:
            raise BadValue('time.steps', "must be nonnegative")
    stride = t.integer('stride', RUN_DEFAULTS['stride'])
    if stride < 1:
        raise BadValue('time.stride', "must be >= 1")
    scheme = t.string('scheme', RUN_DEFAULTS['scheme'], choices=SCHEMES)
    t.finish()

    s = _Section(root.get('solver', {}), 'solver')
    tol = s.number('tol', SOLVER_CONFIG['tol'])
    if not tol > 0.0:
        raise BadValue('solver.tol', "must be positive")
    max_iter = s.integer('max_iter', SOLVER_CONFIG['max_iter'])
    method = s.string('method', None, choices=('newton', 'picard', 'hybrid'))
    s.finish()
    if eps == 0.0 and method not in (None, 'picard'):
        raise BadValue('solver.method', "eps = 0 runs need the picard method")

    o = _Section(root.get('output', {}), 'output')
    output_dir = o.string('dir', None)
    o.finish()

    checks = root.get('checks', [])
    if not isinstance(checks, list) or any(ch not in CHECK_NAMES for ch in checks):
        raise BadValue('checks', f"expected a list drawn from {list(CHECK_NAMES)}")

    an = _Section(root.get('analysis', {}), 'analysis')
    analysis = {
        'ell': an.integer('ell', 1),
        'fit': an.string('fit', None, choices=('exponential', 'algebraic')),
        'window': an.numbers('window', None, length=2),
        'T0': an.number('T0', None),
    }
    an.finish()
    if analysis['ell'] not in (1, 2):
        raise BadValue('analysis.ell', "must be 1 or 2")

    pair = root.get('pair', None)
    if pair is not None:
        if not isinstance(pair, dict) or 'pair' in pair:
            raise BadValue('pair', "expected a section of overrides")
        partner = {k: v for k, v in raw.items() if k != 'pair'}
        try:
            _parse_dict(_deep_merge(partner, pair))
        except ConfigError as exc:
            raise BadValue(f"pair.{exc.key}", str(exc)) from exc
    root.finish()

    return RunConfig(
        grid=spec, m=m, a=a, eps=eps, initial=initial, potential=potential,
        forcing=forcing, dt=dt, steps=steps, horizon=horizon, stride=stride,
        scheme=scheme, tol=tol, max_iter=max_iter, method=method,
        output_dir=output_dir, checks=tuple(checks), analysis=analysis, seed=seed,
        pair=copy.deepcopy(pair), name=name,
    )


def parse_config(source: Union[str, Path, Dict[str, Any]]) -> RunConfig:
    """
    Parse and validate a run configuration.

    Args:
        source: Path to a JSON file, JSON text, or an already decoded dict

    Returns:
        RunConfig: Validated configuration with defaults filled in

    Raises:
        MissingKey, BadValue: Invalid input (with the dotted key path)
        CoefficientOutsideC: a is outside C(m)
    """
    return _parse_dict(_load_raw(source))


def config_to_dict(cfg: RunConfig) -> Dict[str, Any]:
    time = {'dt': cfg.dt, 'stride': cfg.stride, 'scheme': cfg.scheme}
    if cfg.horizon is not None:
        time['horizon'] = cfg.horizon
    else:
        time['steps'] = cfg.steps
    solver = {'tol': cfg.tol, 'max_iter': cfg.max_iter}
    if cfg.method is not None:
        solver['method'] = cfg.method
    out = {
        'name': cfg.name,
        'seed': cfg.seed,
        'grid': {'lengths': list(cfg.grid.lengths), 'counts': list(cfg.grid.counts),
                 'unbounded_proxy': cfg.grid.unbounded_proxy},
        'coefficient': {'m': cfg.m, 'a': [cfg.a.real, cfg.a.imag], 'eps': cfg.eps},
        'initial': copy.deepcopy(cfg.initial),
        'potential': copy.deepcopy(cfg.potential),
        'forcing': copy.deepcopy(cfg.forcing),
        'time': time,
        'solver': solver,
        'output': {} if cfg.output_dir is None else {'dir': cfg.output_dir},
        'checks': list(cfg.checks),
        'analysis': copy.deepcopy(cfg.analysis),
    }
    if cfg.pair is not None:
        out['pair'] = copy.deepcopy(cfg.pair)
    return out


def emit_config(cfg: RunConfig) -> str:
    """JSON text that parse_config turns back into an equal RunConfig"""
    return json.dumps(config_to_dict(cfg), indent=2)


def pair_config(cfg: RunConfig) -> RunConfig:
    """Second run of a contraction pair: the config with its pair overrides applied"""
    if cfg.pair is None:
        raise BadValue('pair', "contraction needs a 'pair' section")
    base = config_to_dict(cfg)
    overrides = base.pop('pair')
    return _parse_dict(_deep_merge(base, overrides))

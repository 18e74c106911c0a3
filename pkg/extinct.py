"""
Extinction Analysis Module
Author: Solver Engineer (Person 2)

Post-processing of finished runs: extinction detection, comparison-ODE
envelopes y' = -2 alpha_l y^delta and the reverse-inequality floor, the
run-derived Gagliardo-Nirenberg constant, decay-law fits and the long-time
vanishing monitor. Everything here reads immutable ledgers and snapshots.
"""

import csv
import json
import math
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize_scalar

from coeff import ExtinctionExponents, extinction_exponents, gn_exponents
from config import EXTINCTION_CONFIG, REPORT_SCHEMA_VERSION
from evolve import MassLedger, Trajectory
from grid import lp_norm
from nonlin import AbsorptionParams

logger = logging.getLogger(__name__)

DELTA_ONE_TOL = 1e-12


class InsufficientData(ValueError):
    """Not enough usable ledger entries for the requested estimate"""


class DegenerateFit(InsufficientData):
    """Fit parameter pinned to the edge of its search range"""


def _ledger_of(source: Union[MassLedger, Trajectory]) -> MassLedger:
    return source.ledger if isinstance(source, Trajectory) else source


def _finite_or_none(x: Optional[float]) -> Optional[float]:
    if x is None or not math.isfinite(x):
        return None
    return float(x)


# ============================================================================
# ENVELOPES
# ============================================================================

@dataclass(frozen=True)
class EnvelopeParams:
    """Data of the comparison ODE started at T0 from y0 = ||u(T0)||^2"""
    y0: float
    alpha_ell: float
    delta: float
    T0: float = 0.0
    ell: int = 1

    def __post_init__(self):
        if not (math.isfinite(self.y0) and self.y0 >= 0.0):
            raise ValueError(f"y0 must be finite and >= 0, got {self.y0}")
        if not (math.isfinite(self.alpha_ell) and self.alpha_ell > 0.0):
            raise ValueError(f"alpha_l must be positive, got {self.alpha_ell}")
        if not self.delta > 0.5:
            raise ValueError(f"delta must exceed 1/2, got {self.delta}")


class Envelope:
    """
    Closed-form solution of y' = -2 alpha y^delta, y(T0) = y0.

    delta < 1 extinguishes at T0 + y0^(1-delta) / (2 alpha (1-delta)),
    delta = 1 decays exponentially, delta > 1 decays algebraically.
    """

    def __init__(self, params: EnvelopeParams):
        self.params = params
        d = params.delta
        if abs(d - 1.0) <= DELTA_ONE_TOL:
            self.kind = 'exponential'
        elif d < 1.0:
            self.kind = 'finite'
        else:
            self.kind = 'algebraic'

    @property
    def extinction_time(self) -> float:
        p = self.params
        if p.y0 == 0.0:
            return p.T0
        if self.kind != 'finite':
            return math.inf
        return p.T0 + p.y0 ** (1.0 - p.delta) / (2.0 * p.alpha_ell * (1.0 - p.delta))

    def __call__(self, t):
        p = self.params
        t_arr = np.asarray(t, dtype=np.float64)
        s = np.maximum(t_arr - p.T0, 0.0)
        if p.y0 == 0.0:
            y = np.zeros_like(s)
        elif self.kind == 'exponential':
            y = p.y0 * np.exp(-2.0 * p.alpha_ell * s)
        elif self.kind == 'finite':
            base = p.y0 ** (1.0 - p.delta) - 2.0 * p.alpha_ell * (1.0 - p.delta) * s
            y = np.maximum(base, 0.0) ** (1.0 / (1.0 - p.delta))
        else:
            base = p.y0 ** (1.0 - p.delta) + 2.0 * p.alpha_ell * (p.delta - 1.0) * s
            y = base ** (-1.0 / (p.delta - 1.0))
        return float(y) if np.ndim(t) == 0 else y


def envelope(p: EnvelopeParams) -> Envelope:
    return Envelope(p)


def floor_curve(y0: float, T0: float, im_a: float, measure: float, m: float) -> Envelope:
    """
    Lower comparison curve from the reverse inequality
    y' >= -2 Im(a) |Omega|^((1-m)/2) y^((m+1)/2).

    Its extinction time T0 + y0^((1-m)/2) / ((1-m) Im(a) |Omega|^((1-m)/2))
    is the lower bound on the extinction time.
    """
    alpha = im_a * measure ** (0.5 * (1.0 - m))
    return Envelope(EnvelopeParams(y0, alpha, 0.5 * (1.0 + m), T0))


def ode_extinction_time(y0: float, alpha: float, delta: float,
                        stop_ratio: Optional[float] = None) -> float:
    """
    Extinction time of y' = -2 alpha y^delta by numerical integration.

    Integrates s = log y, s' = -2 alpha exp((delta - 1) s), with DOP853 and a
    terminal event once y^(1-delta) has dropped by stop_ratio; the time left
    at that point is stop_ratio times the total.
    """
    if y0 == 0.0:
        return 0.0
    if delta >= 1.0:
        return math.inf
    stop_ratio = EXTINCTION_CONFIG['ode_stop_ratio'] if stop_ratio is None else stop_ratio
    s0 = math.log(y0)
    s_stop = s0 + math.log(stop_ratio) / (1.0 - delta)

    def rhs(t, s):
        return [-2.0 * alpha * math.exp((delta - 1.0) * s[0])]

    def reached(t, s):
        return s[0] - s_stop
    reached.terminal = True
    reached.direction = -1

    t_end = 1.0
    t_start = 0.0
    state = [s0]
    while True:
        sol = solve_ivp(rhs, (t_start, t_end), state, method='DOP853', events=reached,
                        rtol=1e-12, atol=1e-12)
        if sol.status == 1 and sol.t_events[0].size:
            return float(sol.t_events[0][0])
        if sol.status < 0:
            raise RuntimeError(f"ODE integration failed: {sol.message}")
        t_start, t_end = t_end, 10.0 * t_end
        state = [sol.y[0, -1]]


# ============================================================================
# GAGLIARDO-NIRENBERG CONSTANT
# ============================================================================

def gn_ratio(mass: float, lmp1: float, grad: float, N: int, ell: int, m: float) -> float:
    """||u||_2^theta / (||u||_{m+1}^{m+1} ||grad^l u||_2^kappa) for one state"""
    theta, kappa = gn_exponents(N, ell, m)
    return mass ** (0.5 * theta) / (lmp1 * grad ** kappa)


def gn_constant_estimate(source: Union[MassLedger, Trajectory], m: float, N: int,
                         ell: int = 1, mass_floor: Optional[float] = None) -> float:
    """
    Run-derived Gagliardo-Nirenberg constant: max of gn_ratio over ledger
    entries with mass above the floor (l=1 uses ||grad u||, l=2 uses ||lap u||).
    """
    ledger = _ledger_of(source)
    mass_floor = EXTINCTION_CONFIG['gn_mass_floor'] if mass_floor is None else mass_floor
    if len(ledger) == 0:
        raise InsufficientData("empty ledger")
    mass = ledger.column('mass')
    lmp1 = ledger.column('lmp1')
    grad = ledger.column('h1' if ell == 1 else 'lapl2')
    usable = (mass > mass_floor) & (lmp1 > 0.0) & (grad > 0.0)
    if not np.any(usable):
        raise InsufficientData("no ledger entry above the mass floor")
    ratios = [gn_ratio(y, a, g, N, ell, m)
              for y, a, g in zip(mass[usable], lmp1[usable], grad[usable])]
    return float(max(ratios))


# ============================================================================
# DETECTION AND BOUNDS
# ============================================================================

def detect_extinction(source: Union[MassLedger, Trajectory],
                      threshold: Optional[float] = None) -> Optional[float]:
    """First ledger time from which the mass stays at or below the threshold"""
    ledger = _ledger_of(source)
    threshold = EXTINCTION_CONFIG['mass_threshold'] if threshold is None else threshold
    mass = ledger.column('mass')
    if mass.size == 0:
        return None
    above = np.nonzero(mass > threshold)[0]
    if above.size == 0:
        return float(ledger[0].t)
    last = above[-1]
    if last == mass.size - 1:
        return None
    return float(ledger[last + 1].t)


@dataclass
class BoundReport:
    """Lower/upper extinction-time bounds and curve dominations of one run"""
    T0: float
    y0: float
    T_num: Optional[float]
    lower_bound: float
    upper_envelope_time: float
    lower_ok: bool
    upper_ok: bool
    envelope_ok: bool
    floor_ok: bool
    max_envelope_ratio: float
    min_floor_ratio: float
    exponents: Optional[ExtinctionExponents] = None

    @property
    def passed(self) -> bool:
        return self.lower_ok and self.upper_ok and self.envelope_ok and self.floor_ok

    def to_dict(self) -> Dict[str, object]:
        return {
            'T0': self.T0,
            'y0': self.y0,
            'T_num': self.T_num,
            'lower_bound': self.lower_bound,
            'upper_envelope_time': _finite_or_none(self.upper_envelope_time),
            'lower_ok': self.lower_ok,
            'upper_ok': self.upper_ok,
            'envelope_ok': self.envelope_ok,
            'floor_ok': self.floor_ok,
            'max_envelope_ratio': _finite_or_none(self.max_envelope_ratio),
            'min_floor_ratio': _finite_or_none(self.min_floor_ratio),
            'exponents': self.exponents.to_dict() if self.exponents else None,
        }


def bound_report(source: Union[MassLedger, Trajectory], params: AbsorptionParams,
                 c_gn: float, N: int, measure: float, ell: int = 1, T0: float = 0.0,
                 slack: Optional[float] = None,
                 threshold: Optional[float] = None) -> BoundReport:
    """
    Compare a run with the extinction-time bounds.

    Args:
        source: Ledger (or trajectory) of a run with f = 0 after T0
        params (AbsorptionParams): Coefficients of the run
        c_gn (float): Run-derived Gagliardo-Nirenberg constant
        N (int): Space dimension
        measure (float): |Omega|
        ell (int): 1 (gradient form) or 2 (Laplacian form)
        T0 (float): Forcing cutoff
        slack (float): Relative slack (default 5%)
        threshold (float): Extinction threshold on the mass

    Returns:
        BoundReport: lower <= T_num <= upper plus envelope and floor domination
    """
    ledger = _ledger_of(source)
    slack = EXTINCTION_CONFIG['bound_slack'] if slack is None else slack
    threshold = EXTINCTION_CONFIG['mass_threshold'] if threshold is None else threshold
    t = ledger.column('t')
    y = ledger.column('mass')
    m = params.m
    im_a = params.a.imag

    start = int(np.searchsorted(t, T0 - 1e-12))
    if start >= t.size:
        raise InsufficientData(f"ledger ends before T0 = {T0}")
    T0 = float(t[start])
    y0 = float(y[start])
    T_num = detect_extinction(ledger, threshold)
    horizon = float(t[-1])

    if y0 == 0.0:
        return BoundReport(T0, 0.0, T_num, T0, T0, True, True, True, True, 0.0, 1.0)

    floor = floor_curve(y0, T0, im_a, measure, m)
    lower = floor.extinction_time

    grad = ledger.column('h1' if ell == 1 else 'lapl2')
    exps = extinction_exponents(N, ell, m, params.a, c_gn, float(np.max(grad)))
    env = Envelope(EnvelopeParams(y0, exps.alpha_ell, exps.delta, T0, ell))
    upper = env.extinction_time

    tail = slice(start, None)
    env_values = env(t[tail])
    envelope_ok = bool(np.all(y[tail] <= env_values * (1.0 + slack) + threshold))
    with np.errstate(divide='ignore', invalid='ignore'):
        env_ratio = np.where(env_values > 0.0, y[tail] / env_values,
                             np.where(y[tail] > threshold, math.inf, 0.0))

    alive = (t >= T0) & (y > threshold)
    if T_num is not None:
        alive &= t < T_num
    floor_values = floor(t[alive])
    floor_ok = bool(np.all(y[alive] >= floor_values * (1.0 - slack) - threshold))
    with np.errstate(divide='ignore', invalid='ignore'):
        floor_ratio = np.where(floor_values > 0.0, y[alive] / floor_values, math.inf)

    if T_num is None:
        lower_ok = True
        upper_ok = bool(horizon <= T0 + (upper - T0) * (1.0 + slack))
    else:
        lower_ok = bool(T_num - T0 >= (lower - T0) * (1.0 - slack))
        upper_ok = bool(T_num - T0 <= (upper - T0) * (1.0 + slack))

    report = BoundReport(
        T0=T0, y0=y0, T_num=T_num, lower_bound=lower, upper_envelope_time=upper,
        lower_ok=lower_ok, upper_ok=upper_ok, envelope_ok=envelope_ok, floor_ok=floor_ok,
        max_envelope_ratio=float(np.max(env_ratio)) if env_ratio.size else 0.0,
        min_floor_ratio=float(np.min(floor_ratio)) if floor_ratio.size else 1.0,
        exponents=exps,
    )
    logger.info("bounds: lower %.4g <= T_num %s <= upper %.4g (envelope %s, floor %s)",
                lower, T_num, upper, envelope_ok, floor_ok)
    return report


# ============================================================================
# DECAY FITS
# ============================================================================

def theoretical_exponent(N: int, ell: int, m: float) -> Optional[float]:
    """Algebraic decay exponent of ||u||_2: 2/((1-m)(N-2)) or 4/((1-m)(N-4))"""
    if ell == 1 and N > 2:
        return 2.0 / ((1.0 - m) * (N - 2))
    if ell == 2 and N > 4:
        return 4.0 / ((1.0 - m) * (N - 4))
    return None


@dataclass
class DecayFit:
    kind: str
    rate_or_exponent: float
    r2: float
    window: Tuple[float, float]
    points: int
    theoretical: Optional[float] = None
    scale: Optional[float] = None           # c of the algebraic model

    @property
    def relative_error(self) -> Optional[float]:
        if self.theoretical is None or self.theoretical == 0.0:
            return None
        return abs(self.rate_or_exponent - self.theoretical) / abs(self.theoretical)

    def to_dict(self) -> Dict[str, object]:
        return {
            'kind': self.kind,
            'rate_or_exponent': self.rate_or_exponent,
            'r2': self.r2,
            'window': list(self.window),
            'points': self.points,
            'theoretical': self.theoretical,
            'scale': self.scale,
            'relative_error': self.relative_error,
        }


def _linear_fit(x: np.ndarray, z: np.ndarray) -> Tuple[np.ndarray, float, float]:
    """Least squares z ~ c0 + c1 x; returns (coefficients, sse, r2)"""
    A = np.vstack([np.ones_like(x), x]).T
    coef, _, _, _ = np.linalg.lstsq(A, z, rcond=None)
    resid = z - A @ coef
    sse = float(resid @ resid)
    sst = float(np.sum((z - z.mean()) ** 2))
    r2 = 1.0 - sse / sst if sst > 0.0 else 1.0
    return coef, sse, min(max(r2, 0.0), 1.0)


def decay_fit(source: Union[MassLedger, Trajectory], kind: str,
              window: Optional[Tuple[float, float]] = None, T0: float = 0.0,
              theoretical: Optional[float] = None) -> DecayFit:
    """
    Fit a decay law to the ledger mass inside a time window.

    exponential: least squares on log y against t; reports the rate r of
        y ~ exp(-r t), which equals 2 alpha_l on an envelope.
    algebraic: least squares on log ||u||_2 against log(1 + c (t - T0)), with
        the scale c found by a bounded search on log c; reports the exponent p
        of ||u||_2 ~ (1 + c (t - T0))^(-p).
    """
    ledger = _ledger_of(source)
    t = ledger.column('t')
    y = ledger.column('mass')
    if window is None:
        window = (T0, float(t[-1]))
    lo, hi = window
    live = np.nonzero(y > EXTINCTION_CONFIG['mass_threshold'])[0]
    if live.size:
        hi = min(hi, float(t[live[-1]]))
    usable = (t >= lo) & (t <= hi) & (y > EXTINCTION_CONFIG['fit_mass_floor'])
    count = int(np.count_nonzero(usable))
    if count < EXTINCTION_CONFIG['fit_min_points']:
        raise InsufficientData(f"{count} usable ledger points in window {window}, "
                               f"need {EXTINCTION_CONFIG['fit_min_points']}")
    tw = t[usable]
    yw = y[usable]

    if kind == 'exponential':
        coef, _, r2 = _linear_fit(tw, np.log(yw))
        return DecayFit(kind, float(-coef[1]), r2, (lo, hi), count, theoretical)

    if kind != 'algebraic':
        raise ValueError(f"unknown fit kind {kind!r}")

    s = tw - T0
    if np.any(s < 0.0):
        raise ValueError("algebraic fit window must start at or after T0")
    z = 0.5 * np.log(yw)
    span = max(float(s.max()), 1e-300)

    def sse(log_c: float) -> float:
        return _linear_fit(np.log1p(math.exp(log_c) * s), z)[1]

    bounds = (math.log(1e-4 / span), math.log(1e4 / span))
    best = minimize_scalar(sse, bounds=bounds, method='bounded',
                           options={'xatol': 1e-12, 'maxiter': 1000})
    c = math.exp(best.x)
    edge = EXTINCTION_CONFIG['fit_scale_edge'] * (bounds[1] - bounds[0])
    if min(best.x - bounds[0], bounds[1] - best.x) <= edge:
        raise DegenerateFit(f"algebraic scale c = {c:.3g} sits on its search bound; "
                           f"the mass in {(lo, hi)} does not follow (1 + c t)^(-p)")
    coef, _, r2 = _linear_fit(np.log1p(c * s), z)
    return DecayFit(kind, float(-coef[1]), r2, (lo, hi), count, theoretical, c)


def exponential_window(source: Union[MassLedger, Trajectory], T0: float = 0.0,
                       fractions: Optional[Tuple[float, float]] = None) -> Tuple[float, float]:
    """Window from the first time y <= hi*y(T0) to the last time y >= lo*y(T0)"""
    ledger = _ledger_of(source)
    hi_frac, lo_frac = EXTINCTION_CONFIG['decay_window'] if fractions is None else fractions
    t = ledger.column('t')
    y = ledger.column('mass')
    after = t >= T0 - 1e-12
    if not np.any(after):
        raise InsufficientData("ledger ends before T0")
    y0 = y[after][0]
    start = np.nonzero(after & (y <= hi_frac * y0))[0]
    stop = np.nonzero(after & (y >= lo_frac * y0))[0]
    if start.size == 0 or stop.size == 0 or t[stop[-1]] <= t[start[0]]:
        raise InsufficientData("mass does not cover the requested decay window")
    return float(t[start[0]]), float(t[stop[-1]])


# ============================================================================
# VANISHING MONITOR
# ============================================================================

@dataclass
class VanishingReport:
    status: str                         # extinct | vanishing | not_vanishing | inconclusive
    tails: Dict[str, float] = field(default_factory=dict)
    decreasing: Dict[str, bool] = field(default_factory=dict)
    below_half_horizon: Optional[bool] = None

    def to_dict(self) -> Dict[str, object]:
        return {
            'status': self.status,
            'tails': self.tails,
            'decreasing': self.decreasing,
            'below_half_horizon': self.below_half_horizon,
        }


def vanishing_monitor(traj: Trajectory, p_list: Optional[Sequence[float]] = None,
                      threshold: Optional[float] = None) -> VanishingReport:
    """
    Tail trend of ||u||_2, ||u||_p, ||grad u||_2 and the mass loss rate over
    the final quarter of the horizon. Inconclusive while the forcing is still
    active at the horizon.
    """
    p_list = EXTINCTION_CONFIG['p_list'] if p_list is None else p_list
    ledger = traj.ledger
    t = ledger.column('t')
    horizon = float(t[-1])
    cutoff = traj.forcing.T0
    if cutoff is None or cutoff >= horizon:
        return VanishingReport('inconclusive')

    if detect_extinction(ledger, threshold) is not None:
        tails = {'l2': 0.0, 'h1': 0.0, 'mass_rate': 0.0}
        tails.update({f'l{p:g}': 0.0 for p in p_list})
        return VanishingReport('extinct', tails, {k: True for k in tails}, True)

    quarter = t >= 0.75 * horizon
    l2 = np.sqrt(ledger.column('mass'))
    series = {
        'l2': l2[quarter],
        'h1': ledger.column('h1')[quarter],
    }
    rate = -np.diff(ledger.column('mass')) / traj.time_grid.dt
    series['mass_rate'] = np.abs(rate[quarter[1:]])

    snap_t = np.array(traj.times)
    late = [u for tk, u in zip(snap_t, traj.snapshots) if tk >= 0.75 * horizon]
    if len(late) >= 2:
        for p in p_list:
            series[f'l{p:g}'] = np.array([lp_norm(u.values, traj.spec, p) for u in late])

    decreasing = {}
    tails = {}
    for name, values in series.items():
        if values.size < 2:
            continue
        decreasing[name] = bool(values[-1] < values[0] or values[-1] == 0.0)
        tails[name] = float(values[-1])

    half = int(np.searchsorted(t, 0.5 * horizon))
    below_half = bool(l2[-1] < l2[half])
    status = 'vanishing' if decreasing and all(decreasing.values()) and below_half \
        else 'not_vanishing'
    return VanishingReport(status, tails, decreasing, below_half)


# ============================================================================
# REPORTS
# ============================================================================

@dataclass
class ExtinctionReport:
    """Everything the extinction analysis attaches to a run"""
    T_num: Optional[float]
    envelope_ok: bool
    lower_bound: Optional[float]
    upper_envelope_time: Optional[float]
    fit: Optional[DecayFit] = None
    c_gn: Optional[float] = None
    bounds: Optional[BoundReport] = None
    vanishing: Optional[VanishingReport] = None

    def to_dict(self) -> Dict[str, object]:
        return {
            'schema_version': REPORT_SCHEMA_VERSION,
            'T_num': self.T_num,
            'envelope_ok': self.envelope_ok,
            'lower_bound': _finite_or_none(self.lower_bound),
            'upper_envelope_time': _finite_or_none(self.upper_envelope_time),
            'c_gn': self.c_gn,
            'fit': self.fit.to_dict() if self.fit else None,
            'bounds': self.bounds.to_dict() if self.bounds else None,
            'vanishing': self.vanishing.to_dict() if self.vanishing else None,
        }

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, allow_nan=False)


def extinction_report(traj: Trajectory, ell: int = 1, fit_kind: Optional[str] = None,
                      window: Optional[Tuple[float, float]] = None) -> ExtinctionReport:
    """Run the whole analysis on a trajectory whose forcing is cut off at T0"""
    spec = traj.spec
    T0 = traj.forcing.T0 or 0.0
    T_num = detect_extinction(traj.ledger)
    try:
        c_gn = gn_constant_estimate(traj.ledger, traj.params.m, spec.N, ell)
    except InsufficientData:
        c_gn = None

    bounds = None
    if c_gn is not None:
        bounds = bound_report(traj.ledger, traj.params, c_gn, spec.N, spec.measure,
                              ell=ell, T0=T0)

    fit = None
    if fit_kind == 'exponential':
        fit = decay_fit(traj.ledger, 'exponential',
                        window or exponential_window(traj.ledger, T0), T0)
    elif fit_kind == 'algebraic':
        fit = decay_fit(traj.ledger, 'algebraic', window, T0,
                        theoretical_exponent(spec.N, ell, traj.params.m))

    return ExtinctionReport(
        T_num=T_num,
        envelope_ok=bounds.envelope_ok if bounds else True,
        lower_bound=bounds.lower_bound if bounds else None,
        upper_envelope_time=bounds.upper_envelope_time if bounds else None,
        fit=fit,
        c_gn=c_gn,
        bounds=bounds,
        vanishing=vanishing_monitor(traj),
    )


def write_envelope_csv(path, source: Union[MassLedger, Trajectory], env: Envelope,
                       floor: Optional[Envelope] = None) -> None:
    """Columns t, y_env, y_floor, y_ledger at every ledger time"""
    ledger = _ledger_of(source)
    t = ledger.column('t')
    y = ledger.column('mass')
    y_env = env(t)
    y_floor = floor(t) if floor is not None else np.full_like(t, np.nan)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['t', 'y_env', 'y_floor', 'y_ledger'])
        for row in zip(t, y_env, y_floor, y):
            writer.writerow([repr(float(x)) for x in row])

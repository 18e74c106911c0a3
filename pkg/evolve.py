"""
Time Integration Module
Author: Solver Engineer (Person 2)

Implicit Euler (nonlinear semigroup) integration of

    i u_t + lap u + V u + a g_eps(u) = f(t),   u = 0 on the boundary,

with an exact discrete mass ledger per step, plus the contraction, gradient
and regularity monitors that run over finished trajectories. A Crank-Nicolson
(implicit midpoint) variant shares the resolvent solver; its ledger is
diagnostic only.
"""

import csv
import math
import logging
from dataclasses import astuple, dataclass, field, fields
from enum import Enum
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from coeff import require_cone
from config import EXTINCTION_CONFIG, LEDGER_CONFIG, RUN_DEFAULTS, SCHEMES, SOLVER_CONFIG
from grid import (Field, GridSpec, PotentialSpec, check_same_grid, h1_seminorm,
                  inner, l2_norm, laplacian_l2, laplacian_matrix, lmp1_power)
from nonlin import AbsorptionParams, absorption_density, g_values
from stationary import NonConvergence, ResolventSolver, SolveReport

logger = logging.getLogger(__name__)


class StepFailure(RuntimeError):
    """Resolvent solve failed inside a run; carries the partial trajectory"""

    def __init__(self, step: int, t: float, cause: Exception, trajectory: 'Trajectory'):
        self.step = step
        self.t = t
        self.cause = cause
        self.trajectory = trajectory
        super().__init__(f"step {step} at t = {t:.6g} failed: {cause}")


# ============================================================================
# FORCING
# ============================================================================

class ForcingClass(Enum):
    """Time regularity of the forcing"""
    L1L2 = "L1L2"
    W11L2 = "W11L2"
    H10 = "H10"


class ForcingSpec:
    """
    Forcing f(t) sampled on the nodes.

    When the cutoff T0 is set, f vanishes for t > T0.
    """

    def __init__(self, spec: GridSpec, sampler: Callable[[float], np.ndarray],
                 T0: Optional[float] = None, smoothness: ForcingClass = ForcingClass.L1L2,
                 description: str = 'custom', is_zero: bool = False):
        if T0 is not None and T0 < 0.0:
            raise ValueError(f"forcing cutoff must be nonnegative, got {T0}")
        self.spec = spec
        self.sampler = sampler
        self.T0 = None if T0 is None else float(T0)
        self.smoothness = ForcingClass(smoothness)
        self.description = description
        self.is_zero = is_zero
        self._zero = np.zeros(spec.size, dtype=np.complex128)

    def __call__(self, t: float) -> np.ndarray:
        if self.T0 is not None and t > self.T0:
            return self._zero
        values = np.asarray(self.sampler(t), dtype=np.complex128).ravel()
        if values.size != self.spec.size:
            raise ValueError(f"forcing sampler returned {values.size} values "
                             f"for {self.spec.size} nodes")
        return values

    def norm(self, t: float) -> float:
        return l2_norm(self(t), self.spec)

    def grad_norm(self, t: float) -> float:
        return h1_seminorm(self(t), self.spec)

    @classmethod
    def zero(cls, spec: GridSpec) -> 'ForcingSpec':
        zeros = np.zeros(spec.size, dtype=np.complex128)
        return cls(spec, lambda t: zeros, T0=0.0, smoothness=ForcingClass.H10,
                   description='zero', is_zero=True)

    @classmethod
    def windowed(cls, profile: Field, amplitude: float, T0: float, power: float = 1.0,
                 smoothness: ForcingClass = ForcingClass.H10) -> 'ForcingSpec':
        """f(t) = amplitude * (T0 - t)_+^power * profile, zero from T0 on"""
        base = np.array(profile.values)
        T0 = float(T0)

        def sampler(t: float) -> np.ndarray:
            if t >= T0:
                return np.zeros_like(base)
            return amplitude * (T0 - t) ** power * base

        return cls(profile.spec, sampler, T0=T0, smoothness=smoothness,
                   description='windowed')

    @classmethod
    def from_profile(cls, profile: Field, T0: Optional[float] = None,
                     description: str = 'file') -> 'ForcingSpec':
        """Time-independent profile, switched off after T0 when given"""
        base = np.array(profile.values)
        return cls(profile.spec, lambda t: base, T0=T0, smoothness=ForcingClass.L1L2,
                   description=description)


# ============================================================================
# LEDGER
# ============================================================================

@dataclass(frozen=True)
class TimeGrid:
    """Uniform time grid t_k = k * dt, k = 0..steps"""
    dt: float
    steps: int

    def __post_init__(self):
        if not (math.isfinite(self.dt) and self.dt > 0.0):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")

    @property
    def horizon(self) -> float:
        return self.dt * self.steps

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.steps + 1)


@dataclass
class MassLedgerEntry:
    """One row of the mass ledger; field order is the CSV column order"""
    t: float
    mass: float
    absorption: float
    lmp1: float
    work: float
    step_defect: float
    identity_residual: float
    h1: float
    lapl2: float

    def as_row(self) -> List[str]:
        return [repr(float(x)) for x in astuple(self)]


LEDGER_COLUMNS = tuple(f.name for f in fields(MassLedgerEntry))


class MassLedger:
    """Append-only per-step record of mass, absorption, forcing work and residuals"""

    def __init__(self, entries: Optional[Sequence[MassLedgerEntry]] = None):
        self.entries: List[MassLedgerEntry] = list(entries or [])

    def append(self, entry: MassLedgerEntry) -> None:
        self.entries.append(entry)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[MassLedgerEntry]:
        return iter(self.entries)

    def __getitem__(self, index):
        return self.entries[index]

    def column(self, name: str) -> np.ndarray:
        if name not in LEDGER_COLUMNS:
            raise KeyError(f"unknown ledger column {name!r}")
        return np.array([getattr(e, name) for e in self.entries], dtype=np.float64)

    @property
    def times(self) -> np.ndarray:
        return self.column('t')

    @property
    def max_identity_residual(self) -> float:
        if not self.entries:
            return 0.0
        return float(np.max(self.column('identity_residual')))

    def to_csv(self, path) -> None:
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(LEDGER_COLUMNS)
            for entry in self.entries:
                writer.writerow(entry.as_row())

    @classmethod
    def from_csv(cls, path) -> 'MassLedger':
        entries = []
        with open(path, 'r', newline='') as f:
            reader = csv.DictReader(f)
            if tuple(reader.fieldnames or ()) != LEDGER_COLUMNS:
                raise ValueError(f"ledger columns {reader.fieldnames} do not match "
                                 f"{LEDGER_COLUMNS}")
            for row in reader:
                entries.append(MassLedgerEntry(**{k: float(row[k]) for k in LEDGER_COLUMNS}))
        return cls(entries)

    @classmethod
    def from_columns(cls, **columns: Sequence[float]) -> 'MassLedger':
        """Build a ledger from column arrays; missing columns are zero"""
        t = np.asarray(columns['t'], dtype=np.float64)
        data = {name: np.asarray(columns.get(name, np.zeros_like(t)), dtype=np.float64)
                for name in LEDGER_COLUMNS}
        return cls([MassLedgerEntry(**{k: float(data[k][i]) for k in LEDGER_COLUMNS})
                    for i in range(t.size)])


@dataclass
class Trajectory:
    """Snapshots and ledger of one run; immutable once the run has finished"""
    spec: GridSpec
    params: AbsorptionParams
    potential: PotentialSpec
    forcing: ForcingSpec
    time_grid: TimeGrid
    scheme: str
    tol: float
    stride: int
    times: List[float] = field(default_factory=list)
    snapshots: List[Field] = field(default_factory=list)
    snapshot_steps: List[int] = field(default_factory=list)
    ledger: MassLedger = field(default_factory=MassLedger)
    iterations: List[int] = field(default_factory=list)
    fallbacks: int = 0
    extinct_at: Optional[float] = None
    final: Optional[Field] = None

    def forcing_time(self, step: int) -> float:
        """Time at which step k (1-based) samples the forcing"""
        if self.scheme == 'crank_nicolson':
            return (step - 0.5) * self.time_grid.dt
        return step * self.time_grid.dt

    def record_snapshot(self, step: int, u: Field) -> None:
        self.times.append(step * self.time_grid.dt)
        self.snapshots.append(u)
        self.snapshot_steps.append(step)

    @property
    def steps_done(self) -> int:
        return len(self.ledger) - 1


# ============================================================================
# INTEGRATOR
# ============================================================================

class NLSIntegrator:
    """
    Implicit time stepper for the damped NLS equation.

    Each implicit Euler step solves u+ + dt A_eps u+ = u - i dt f(t+dt) with
    the resolvent solver; the midpoint variant solves for w = (u + u+)/2 with
    weight dt/2 and sets u+ = 2w - u.
    """

    def __init__(self, spec: GridSpec, params: AbsorptionParams, potential: PotentialSpec,
                 forcing: ForcingSpec, dt: float, tol: Optional[float] = None,
                 max_iter: Optional[int] = None, method: Optional[str] = None,
                 scheme: str = RUN_DEFAULTS['scheme'], snap_mass: Optional[float] = None):
        self.classification = require_cone(params.a, params.m)
        check_same_grid(spec, potential.spec, forcing.spec)
        if scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {scheme!r}, expected one of {SCHEMES}")
        if not (math.isfinite(dt) and dt > 0.0):
            raise ValueError(f"dt must be positive, got {dt}")

        self.spec = spec
        self.params = params
        self.potential = potential
        self.forcing = forcing
        self.dt = float(dt)
        self.tol = SOLVER_CONFIG['tol'] if tol is None else float(tol)
        self.max_iter = max_iter
        if method is None:
            method = SOLVER_CONFIG['method'] if params.eps > 0.0 else 'picard'
        self.method = method
        self.scheme = scheme
        self.snap_mass = LEDGER_CONFIG['snap_mass'] if snap_mass is None else snap_mass

        tau = self.dt if scheme == 'implicit_euler' else 0.5 * self.dt
        self.solver = ResolventSolver(spec, tau, params, potential)

    def _absorption(self, values: np.ndarray) -> float:
        density = absorption_density(values, self.params.m, self.params.eps)
        return self.spec.cell_volume * float(np.sum(density))

    def initial_entry(self, u0: Field, t: float = 0.0) -> MassLedgerEntry:
        values = u0.values
        return MassLedgerEntry(
            t=t,
            mass=l2_norm(values, self.spec) ** 2,
            absorption=self._absorption(values),
            lmp1=lmp1_power(values, self.spec, self.params.m),
            work=inner(self.forcing(t), values, self.spec).imag,
            step_defect=0.0,
            identity_residual=0.0,
            h1=h1_seminorm(values, self.spec),
            lapl2=laplacian_l2(values, self.spec),
        )

    def step(self, u: Field, t: float) -> Tuple[Field, MassLedgerEntry, SolveReport]:
        """
        Advance one step from (u, t).

        Returns:
            tuple: (u+, ledger entry at t + dt, solver report)
        """
        dt = self.dt
        spec = self.spec
        im_a = self.params.a.imag
        old = u.values
        mass_old = l2_norm(old, spec) ** 2

        if self.scheme == 'implicit_euler':
            f = self.forcing(t + dt)
            rhs = Field(old - 1j * dt * f, spec)
            new_field, report = self.solver.solve(rhs, self.tol, self.max_iter,
                                                  self.method, initial_guess=u)
            new = np.array(new_field.values)
            if l2_norm(new, spec) ** 2 < self.snap_mass:
                new[:] = 0.0
            paired = new
        else:
            f = self.forcing(t + 0.5 * dt)
            rhs = Field(old - 0.5j * dt * f, spec)
            mid_field, report = self.solver.solve(rhs, self.tol, self.max_iter,
                                                  self.method, initial_guess=u)
            new = 2.0 * np.array(mid_field.values) - old
            if l2_norm(new, spec) ** 2 < self.snap_mass:
                new[:] = 0.0
            paired = 0.5 * (old + new)

        mass_new = l2_norm(new, spec) ** 2
        absorption = self._absorption(paired)
        work = inner(f, paired, spec).imag
        defect = 0.5 * l2_norm(new - old, spec) ** 2
        if self.scheme == 'implicit_euler':
            identity = 0.5 * (mass_new - mass_old) + defect + dt * im_a * absorption - dt * work
        else:
            identity = 0.5 * (mass_new - mass_old) + dt * im_a * absorption - dt * work

        entry = MassLedgerEntry(
            t=t + dt,
            mass=mass_new,
            absorption=absorption,
            lmp1=lmp1_power(new, spec, self.params.m),
            work=work,
            step_defect=defect,
            identity_residual=abs(identity),
            h1=h1_seminorm(new, spec),
            lapl2=laplacian_l2(new, spec),
        )
        return Field(new, spec), entry, report

    def run(self, u0: Field, steps: int, stride: int = 1,
            ledger_path=None) -> Trajectory:
        """
        Integrate from u0 for the given number of steps.

        Snapshots are kept every `stride` steps and at the last step. On a
        solver failure the partial ledger is written to ledger_path (when
        given) and StepFailure is raised with the partial trajectory.
        """
        check_same_grid(u0.spec, self.spec)
        if stride < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        traj = Trajectory(self.spec, self.params, self.potential, self.forcing,
                          TimeGrid(self.dt, steps), self.scheme, self.tol, stride)
        traj.ledger.append(self.initial_entry(u0))
        traj.record_snapshot(0, u0)
        if traj.ledger[0].mass == 0.0:
            traj.extinct_at = 0.0

        logger.info("run: %d steps of dt=%g (%s, a=%s, m=%g, eps=%g)", steps, self.dt,
                    self.scheme, self.params.a, self.params.m, self.params.eps)
        u = u0
        for k in range(1, steps + 1):
            t = (k - 1) * self.dt
            try:
                u, entry, report = self.step(u, t)
            except NonConvergence as exc:
                traj.final = u
                if ledger_path is not None:
                    traj.ledger.to_csv(ledger_path)
                    logger.info("partial ledger (%d entries) written to %s",
                                len(traj.ledger), ledger_path)
                raise StepFailure(k, t, exc, traj) from exc

            traj.ledger.append(entry)
            traj.iterations.append(report.iterations)
            traj.fallbacks += int(report.fallback_used)
            if entry.mass == 0.0 and traj.extinct_at is None:
                traj.extinct_at = entry.t
                logger.info("state snapped to zero at t = %.6g (step %d)", entry.t, k)
            elif entry.mass > 0.0:
                traj.extinct_at = None
            if k % stride == 0 or k == steps:
                traj.record_snapshot(k, u)

        traj.final = u
        if ledger_path is not None:
            traj.ledger.to_csv(ledger_path)
        logger.info("run finished: final mass %.3e, max identity residual %.3e",
                    traj.ledger[-1].mass, traj.ledger.max_identity_residual)
        return traj


def step(u: Field, t: float, dt: float, params: AbsorptionParams, V: PotentialSpec,
         f: ForcingSpec, tol: float) -> Tuple[Field, MassLedgerEntry]:
    """Single implicit Euler step; see NLSIntegrator.step"""
    integrator = NLSIntegrator(u.spec, params, V, f, dt, tol=tol)
    new, entry, _ = integrator.step(u, t)
    return new, entry


def run(u0: Field, time_grid: TimeGrid, params: AbsorptionParams, V: PotentialSpec,
        forcing: ForcingSpec, tol: Optional[float] = None, stride: int = 1,
        scheme: str = RUN_DEFAULTS['scheme'], method: Optional[str] = None,
        ledger_path=None) -> Trajectory:
    integrator = NLSIntegrator(u0.spec, params, V, forcing, time_grid.dt, tol=tol,
                               method=method, scheme=scheme)
    return integrator.run(u0, time_grid.steps, stride=stride, ledger_path=ledger_path)


# ============================================================================
# MONITORS
# ============================================================================

@dataclass
class ContractionReport:
    passed: bool
    max_violation: float
    max_excess: float
    slack: float
    times: List[float]
    distances: List[float]
    forcing_integral: List[float]

    def to_dict(self) -> Dict[str, object]:
        return {
            'passed': self.passed,
            'max_violation': self.max_violation,
            'max_excess': self.max_excess,
            'slack': self.slack,
            'final_distance': self.distances[-1] if self.distances else 0.0,
        }


def contraction_check(run1: Trajectory, run2: Trajectory) -> ContractionReport:
    """
    Check ||u(t) - v(t)|| <= ||u(s) - v(s)|| + sum dt ||f - g|| + slack for s <= t.

    Evaluated at the common snapshot times (every ledger time when stride = 1)
    through the running minimum of d(s) - I(s); slack = 10 * steps * tol.
    """
    if (run1.spec != run2.spec or run1.params != run2.params
            or run1.time_grid != run2.time_grid or run1.scheme != run2.scheme
            or run1.snapshot_steps != run2.snapshot_steps
            or not np.array_equal(run1.potential.values, run2.potential.values)):
        raise ValueError("contraction check needs runs with identical grid, dt, "
                         "coefficients, potential and snapshot schedule")

    spec = run1.spec
    dt = run1.time_grid.dt
    steps = run1.time_grid.steps
    tol = max(run1.tol, run2.tol)
    slack = 10.0 * max(steps, 1) * tol

    increments = [0.0]
    for k in range(1, steps + 1):
        tk = run1.forcing_time(k)
        increments.append(dt * l2_norm(run1.forcing(tk) - run2.forcing(tk), spec))
    integral = np.cumsum(increments)

    distances = []
    forcing_at = []
    excess = 0.0
    running_min = math.inf
    for k, a, b in zip(run1.snapshot_steps, run1.snapshots, run2.snapshots):
        d = l2_norm(a.values - b.values, spec)
        running_min = min(running_min, d - integral[k])
        excess = max(excess, d - integral[k] - running_min)
        distances.append(d)
        forcing_at.append(float(integral[k]))

    return ContractionReport(
        passed=bool(excess <= slack),
        max_violation=max(0.0, excess - slack),
        max_excess=excess,
        slack=slack,
        times=list(run1.times),
        distances=distances,
        forcing_integral=forcing_at,
    )


@dataclass
class H1Report:
    applicable: bool
    passed: bool
    max_ratio: float                       # max ||grad u(t)|| / bound(t)
    nonincreasing_after_cutoff: bool
    bound: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return {
            'applicable': self.applicable,
            'passed': self.passed,
            'max_ratio': self.max_ratio,
            'nonincreasing_after_cutoff': self.nonincreasing_after_cutoff,
        }


def h1_monitor(traj: Trajectory, tolerance: Optional[float] = None) -> H1Report:
    """
    Gradient bound ||grad u(t)|| <= ||grad u(0)|| + sum dt ||grad f|| (grad V = 0).

    Report-only; tolerance is relative (default 5%). Also reports whether the
    gradient norm is nonincreasing once the forcing has been cut off.
    """
    tolerance = EXTINCTION_CONFIG['h1_tolerance'] if tolerance is None else tolerance
    if not traj.potential.is_constant:
        logger.info("h1 monitor skipped: potential is not constant")
        return H1Report(False, True, 0.0, True)

    h1 = traj.ledger.column('h1')
    t = traj.ledger.column('t')
    dt = traj.time_grid.dt
    increments = [0.0] + [dt * traj.forcing.grad_norm(traj.forcing_time(k))
                          for k in range(1, len(h1))]
    bound = h1[0] + np.cumsum(increments)

    ok = np.all(h1 <= bound * (1.0 + tolerance) + 1e-12)
    with np.errstate(divide='ignore', invalid='ignore'):
        ratios = np.where(bound > 0.0, h1 / bound, 0.0)

    cutoff = traj.forcing.T0
    nonincreasing = True
    if cutoff is not None:
        after = h1[t >= cutoff]
        if after.size > 1:
            slack = 1e-8 * after[:-1] + 10.0 * traj.tol
            nonincreasing = bool(np.all(np.diff(after) <= slack))

    return H1Report(True, bool(ok), float(np.max(ratios)), nonincreasing, bound.tolist())


@dataclass
class RegularityReport:
    applicable: bool
    mass_bound_ok: bool
    velocity_bound_ok: bool
    lipschitz: float                       # max ||u_t|| over the run
    A: List[float] = field(default_factory=list)
    B: List[float] = field(default_factory=list)
    velocity: List[float] = field(default_factory=list)
    energy_like: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, object]:
        return {
            'applicable': self.applicable,
            'mass_bound_ok': self.mass_bound_ok,
            'velocity_bound_ok': self.velocity_bound_ok,
            'lipschitz': self.lipschitz,
            'A_final': self.A[-1] if self.A else None,
            'B_final': self.B[-1] if self.B else None,
        }


def regularity_monitor(traj: Trajectory) -> RegularityReport:
    """
    Discrete counterparts of the strong-solution estimates (implicit Euler only).

    ||u(t)|| <= A(t) = ||u0|| + sum dt ||f||
    ||u_t||  <= B(t) = ||lap u0 + V u0 + a g(u0) - f(0)|| + sum ||f_{k+1} - f_k||

    with u_t the difference quotient recovered from the step defect. The
    series ||grad u||^2 + Im(a) ||u||_{m+1}^{m+1} is logged, not asserted.
    """
    if traj.scheme != 'implicit_euler':
        return RegularityReport(False, True, True, 0.0)

    spec = traj.spec
    p = traj.params
    dt = traj.time_grid.dt
    ledger = traj.ledger
    steps = len(ledger) - 1
    u0 = traj.snapshots[0].values

    f = [traj.forcing(k * dt) for k in range(steps + 1)]
    f_norms = np.array([l2_norm(x, spec) for x in f])
    A = l2_norm(u0, spec) + np.concatenate([[0.0], np.cumsum(dt * f_norms[1:])])

    generator = (laplacian_matrix(spec) @ u0 + traj.potential.values * u0
                 + p.a * g_values(u0, p.m, p.eps) - f[0])
    jumps = np.array([l2_norm(f[k + 1] - f[k], spec) for k in range(steps)])
    B = l2_norm(generator, spec) + np.concatenate([[0.0], np.cumsum(jumps)])

    velocity = np.sqrt(2.0 * ledger.column('step_defect')) / dt
    mass = ledger.column('mass')
    k = np.arange(steps + 1)
    snap = math.sqrt(LEDGER_CONFIG['snap_mass'])
    mass_ok = bool(np.all(np.sqrt(mass) <= A + k * traj.tol + 1e-15))
    velocity_ok = bool(np.all(velocity[1:] <= B[1:] * (1.0 + 1e-8)
                              + (2.0 * k[1:] * traj.tol + 2.0 * snap) / dt))

    energy_like = ledger.column('h1') ** 2 + p.a.imag * ledger.column('lmp1')
    logger.debug("regularity: max ||u_t|| = %.3e, final A = %.3e, final B = %.3e",
                 float(velocity.max()), A[-1], B[-1])
    return RegularityReport(True, mass_ok, velocity_ok, float(velocity.max()),
                            A.tolist(), B.tolist(), velocity.tolist(), energy_like.tolist())


@dataclass
class ConvergenceReport:
    """Successive differences of a refinement study"""
    parameters: List[float]
    differences: List[float]
    orders: List[float]

    @property
    def observed_order(self) -> Optional[float]:
        return self.orders[-1] if self.orders else None


def self_convergence(run_factory: Callable[[float], Field], dt: float,
                     levels: int = 3) -> ConvergenceReport:
    """
    Temporal self-convergence: final states at dt, dt/2, ..., dt/2^(levels-1).

    The observed order is log2(||u_dt - u_dt/2|| / ||u_dt/2 - u_dt/4||).
    """
    if levels < 3:
        raise ValueError("self-convergence needs at least three levels")
    dts = [dt / 2 ** k for k in range(levels)]
    finals = [run_factory(h) for h in dts]
    spec = finals[0].spec
    diffs = [l2_norm(a.values - b.values, spec) for a, b in zip(finals, finals[1:])]
    orders = [math.log2(a / b) if a > 0.0 and b > 0.0 else math.nan
              for a, b in zip(diffs, diffs[1:])]
    logger.info("self-convergence: differences %s, orders %s", diffs, orders)
    return ConvergenceReport(dts, diffs, orders)


def eps_refinement(run_factory: Callable[[float], Field], eps: float, levels: int = 3,
                   factor: float = 10.0) -> ConvergenceReport:
    """Final-state differences along eps, eps/factor, ... (diagnostic only)"""
    values = [eps / factor ** k for k in range(levels)]
    finals = [run_factory(e) for e in values]
    spec = finals[0].spec
    diffs = [l2_norm(a.values - b.values, spec) for a, b in zip(finals, finals[1:])]
    orders = [math.log(a / b, factor) if a > 0.0 and b > 0.0 else math.nan
              for a, b in zip(diffs, diffs[1:])]
    return ConvergenceReport(values, diffs, orders)

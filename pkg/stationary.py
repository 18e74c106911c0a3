"""
Stationary Resolvent Solver
Author: Solver Engineer (Person 2)

Solves the discrete resolvent problem

    u + tau * A_eps u = F,    A_eps u = -i lap u - i V u - i a g_eps(u)

which is both the stationary problem behind maximal monotonicity and the
inner problem of every implicit time step. Newton on the real 2n x 2n form is
the primary method; relaxed Picard iteration is the globally stable fallback
and the only method allowed at eps = 0.
"""

import math
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from config import SOLVER_CONFIG
from grid import (Field, GridSpec, PotentialSpec, check_same_grid, h1_seminorm,
                  inner, l2_norm, laplacian_matrix)
from nonlin import AbsorptionParams, absorption_density, g_linearization, g_values

logger = logging.getLogger(__name__)


class SolveMethod(Enum):
    NEWTON = "newton"
    PICARD = "picard"
    HYBRID = "hybrid"


class NonConvergence(RuntimeError):
    """Iteration budget exhausted without reaching the tolerance"""

    def __init__(self, message: str, best_residual: float, iterations: int,
                 method: str, stage: Optional[int] = None):
        self.best_residual = best_residual
        self.iterations = iterations
        self.method = method
        self.stage = stage
        super().__init__(f"{message} (method={method}, iterations={iterations}, "
                         f"best residual={best_residual:.3e})")


class IllConditioned(RuntimeError):
    """Newton linear solve failed or the line search stagnated"""


@dataclass(frozen=True, eq=False)
class ResolventProblem:
    """Right-hand side F, step weight tau, absorption parameters and potential"""
    F: Field
    tau: float
    params: AbsorptionParams
    V: PotentialSpec

    def __post_init__(self):
        tau = float(self.tau)
        if not (math.isfinite(tau) and tau > 0.0):
            raise ValueError(f"tau must be positive, got {tau}")
        object.__setattr__(self, 'tau', tau)
        check_same_grid(self.F.spec, self.V.spec)

    @property
    def spec(self) -> GridSpec:
        return self.F.spec

    def with_F(self, F: Field) -> 'ResolventProblem':
        return ResolventProblem(F, self.tau, self.params, self.V)

    def with_eps(self, eps: float) -> 'ResolventProblem':
        return ResolventProblem(self.F, self.tau, self.params.with_eps(eps), self.V)


@dataclass
class SolveReport:
    """Outcome of one resolvent solve"""
    iterations: int
    residual_l2: float
    method: str
    apriori_ok: bool
    fallback_used: bool = False
    linear_fallbacks: int = 0

    def to_dict(self) -> Dict[str, object]:
        return {
            'iterations': self.iterations,
            'residual_l2': self.residual_l2,
            'method': self.method,
            'apriori_ok': self.apriori_ok,
            'fallback_used': self.fallback_used,
            'linear_fallbacks': self.linear_fallbacks,
        }


class ResolventSolver:
    """
    Resolvent solver for fixed (grid, tau, params, V).

    The shifted operator K = I - i tau (lap + V) is assembled once, so that a
    time stepper can reuse it across steps with varying right-hand sides.
    The Newton preconditioner is kept between solves in the same way.
    """

    def __init__(self, spec: GridSpec, tau: float, params: AbsorptionParams,
                 V: PotentialSpec, config: Optional[dict] = None):
        check_same_grid(spec, V.spec)
        self.spec = spec
        self.tau = float(tau)
        self.params = params
        self.V = V
        self.config = {**SOLVER_CONFIG, **(config or {})}

        n = spec.size
        self._w = spec.cell_volume
        H = (laplacian_matrix(spec) + sp.diags(V.values)).tocsr()
        self._ki = (-self.tau * H).tocsr()                  # Im K, Re K = I
        self._identity = sp.identity(n, format='csr')
        self._K = (self._identity + 1j * self._ki).tocsc()
        self._k_lu = None
        self._j0 = sp.bmat([[self._identity, -self._ki],
                            [self._ki, self._identity]], format='csc')
        self._precond = None
        self.preconditioner_builds = 0
        self._coef = -1j * self.tau * params.a            # coefficient of g in K u - ...
        self.linear_fallbacks = 0

    # ------------------------------------------------------------------
    # residual and norms
    # ------------------------------------------------------------------

    def norm(self, values: np.ndarray) -> float:
        return float(math.sqrt(self._w * np.vdot(values, values).real))

    def residual(self, u: np.ndarray, F: np.ndarray) -> np.ndarray:
        """K u - i tau a g_eps(u) - F"""
        g = g_values(u, self.params.m, self.params.eps)
        return self._K @ u + self._coef * g - F

    # ------------------------------------------------------------------
    # Newton
    # ------------------------------------------------------------------

    def _jacobian(self, u: np.ndarray) -> sp.csc_matrix:
        """Real 2n x 2n Jacobian of the residual at u"""
        n = self.spec.size
        p, q = g_linearization(u, self.params.m, self.params.eps)
        d = self._coef * p                  # complex-linear diagonal
        c = self._coef * q                  # conjugate-linear diagonal
        local = sp.diags([np.concatenate([d.real + c.real, d.real - c.real]),
                          c.imag - d.imag, d.imag + c.imag],
                         [0, n, -n], shape=(2 * n, 2 * n), format='csc')
        return (self._j0 + local).tocsc()

    def _factor_preconditioner(self, J: sp.csc_matrix) -> None:
        ilu = spla.spilu(J, drop_tol=self.config['ilu_drop_tol'],
                         fill_factor=self.config['ilu_fill_factor'])
        self._precond = spla.LinearOperator(J.shape, matvec=ilu.solve)
        self.preconditioner_builds += 1

    def _gmres(self, J: sp.csc_matrix, b: np.ndarray, atol: float,
               cycles: int) -> Optional[np.ndarray]:
        x, info = spla.gmres(J, b, M=self._precond, rtol=self.config['linear_rtol'],
                             atol=atol, restart=self.config['gmres_restart'], maxiter=cycles)
        if info == 0 and np.all(np.isfinite(x)):
            return x
        logger.debug("gmres returned info=%d", info)
        return None

    def _linear_solve(self, J: sp.csc_matrix, b: np.ndarray, atol: float) -> np.ndarray:
        """
        ILU-preconditioned GMRES with a sparse direct fallback.

        The incomplete factorization is kept across Newton iterations and
        steps; it is refactored at the current Jacobian only when GMRES fails
        to converge within lagged_gmres_cycles restart cycles.
        """
        if self._precond is not None:
            x = self._gmres(J, b, atol, self.config['lagged_gmres_cycles'])
            if x is not None:
                return x
            logger.debug("lagged preconditioner stalled, refactoring")
        try:
            self._factor_preconditioner(J)
            x = self._gmres(J, b, atol, self.config['gmres_cycles'])
            if x is not None:
                return x
        except RuntimeError as exc:
            self._precond = None
            logger.debug("incomplete LU failed (%s), switching to direct solve", exc)

        self.linear_fallbacks += 1
        x = spla.spsolve(J, b)
        if not np.all(np.isfinite(x)):
            raise IllConditioned("Newton linear system is singular")
        return x

    def _newton(self, u: np.ndarray, F: np.ndarray, tol: float,
                max_iter: int) -> Tuple[np.ndarray, float, int]:
        if self.params.eps <= 0.0:
            raise ValueError("Newton needs eps > 0; use Picard at eps = 0")
        n = self.spec.size
        r = self.residual(u, F)
        rn = self.norm(r)
        lam_min = self.config['line_search_min']
        # tol/10 in the weighted norm, expressed in the Euclidean norm
        atol = 0.1 * tol / math.sqrt(self._w)

        for it in range(max_iter + 1):
            if rn <= tol:
                return u, rn, it
            if it == max_iter:
                break
            J = self._jacobian(u)
            rhs = -np.concatenate([r.real, r.imag])
            step = self._linear_solve(J, rhs, atol)
            du = step[:n] + 1j * step[n:]

            lam = 1.0
            while True:
                trial = u + lam * du
                rt = self.residual(trial, F)
                rtn = self.norm(rt)
                if rtn <= (1.0 - 1e-4 * lam) * rn:
                    break
                lam *= 0.5
                if lam < lam_min:
                    raise IllConditioned(f"line search stagnated at residual {rn:.3e}")
            u, r, rn = trial, rt, rtn
            logger.debug("newton %d: residual %.3e, damping %.3g", it + 1, rn, lam)

        raise NonConvergence("Newton budget exhausted", rn, max_iter, 'newton')

    # ------------------------------------------------------------------
    # Picard
    # ------------------------------------------------------------------

    def _k_solve(self, b: np.ndarray) -> np.ndarray:
        if self._k_lu is None:
            self._k_lu = spla.splu(self._K)
        return self._k_lu.solve(b)

    def _picard(self, u: np.ndarray, F: np.ndarray, tol: float,
                max_iter: int) -> Tuple[np.ndarray, float, int]:
        """u <- (1 - w) u + w K^{-1}(F + i tau a g(u)) with adaptive w"""
        omega = self.config['picard_omega']
        omega_min = self.config['picard_omega_min']
        rn = self.norm(self.residual(u, F))
        for it in range(max_iter + 1):
            if rn <= tol:
                return u, rn, it
            if it == max_iter:
                break
            g = g_values(u, self.params.m, self.params.eps)
            target = self._k_solve(F - self._coef * g)
            while True:
                trial = (1.0 - omega) * u + omega * target
                rtn = self.norm(self.residual(trial, F))
                if rtn < rn:
                    break
                omega *= 0.5
                if omega < omega_min:
                    raise NonConvergence("Picard relaxation collapsed", rn, it, 'picard')
            u, rn = trial, rtn
            omega = min(1.0, 2.0 * omega)
        raise NonConvergence("Picard budget exhausted", rn, max_iter, 'picard')

    # ------------------------------------------------------------------
    # driver
    # ------------------------------------------------------------------

    def solve(self, F: Field, tol: Optional[float] = None,
              max_iter: Optional[int] = None, method: str = None,
              initial_guess: Optional[Field] = None,
              allow_fallback: bool = True) -> Tuple[Field, SolveReport]:
        """
        Solve u + tau A_eps u = F.

        Args:
            F (Field): Right-hand side
            tol (float): Residual tolerance in the discrete L2 norm
            max_iter (int): Newton budget (Picard uses picard_max_iter)
            method (str): newton, picard or hybrid
            initial_guess (Field): Starting iterate (default F)
            allow_fallback (bool): Fall back to Picard when Newton fails

        Returns:
            tuple: (u, SolveReport)
        """
        check_same_grid(F.spec, self.spec)
        tol = self.config['tol'] if tol is None else float(tol)
        max_iter = self.config['max_iter'] if max_iter is None else int(max_iter)
        method = SolveMethod(method or self.config['method'])
        if not tol > 0.0:
            raise ValueError(f"tol must be positive, got {tol}")
        if method != SolveMethod.PICARD and self.params.eps <= 0.0:
            raise ValueError("eps = 0 solves are only available through Picard")

        f = np.array(F.values)
        u0 = np.array(initial_guess.values if initial_guess is not None else f)
        self.linear_fallbacks = 0
        fallback = False
        iterations = 0

        if method == SolveMethod.PICARD:
            u, rn, iterations = self._picard(u0, f, tol, self.config['picard_max_iter'])
        else:
            start = u0
            if method == SolveMethod.HYBRID:
                start, _, iterations = self._picard_sweeps(u0, f)
            try:
                u, rn, its = self._newton(start, f, tol, max_iter)
                iterations += its
            except (IllConditioned, NonConvergence) as exc:
                if not allow_fallback:
                    raise
                logger.warning("newton failed (%s); falling back to relaxed Picard", exc)
                fallback = True
                try:
                    u, rn, its = self._picard(u0, f, tol, self.config['picard_max_iter'])
                except NonConvergence as picard_exc:
                    best = min(picard_exc.best_residual,
                               getattr(exc, 'best_residual', math.inf))
                    raise NonConvergence("Newton and Picard both failed", best,
                                         max_iter + picard_exc.iterations,
                                         method.value) from picard_exc
                iterations += max_iter + its

        un = self.norm(u)
        fn = self.norm(f)
        apriori_ok = un <= fn * (1.0 + self.config['apriori_rtol']) + tol
        report = SolveReport(iterations, rn, method.value, bool(apriori_ok),
                             fallback, self.linear_fallbacks)
        logger.debug("resolvent solve: %s", report)
        return Field(u, self.spec), report

    def _picard_sweeps(self, u: np.ndarray, f: np.ndarray) -> Tuple[np.ndarray, float, int]:
        """Plain Picard updates that warm-start Newton; stops at the first non-decrease"""
        rn = self.norm(self.residual(u, f))
        done = 0
        for _ in range(self.config['hybrid_sweeps']):
            g = g_values(u, self.params.m, self.params.eps)
            trial = self._k_solve(f - self._coef * g)
            rtn = self.norm(self.residual(trial, f))
            if rtn >= rn:
                break
            u, rn = trial, rtn
            done += 1
        return u, rn, done


def resolvent_solve(prob: ResolventProblem, tol: float = None, max_iter: int = None,
                    method: str = None, initial_guess: Optional[Field] = None,
                    allow_fallback: bool = True) -> Tuple[Field, SolveReport]:
    """Solve one resolvent problem; see ResolventSolver.solve"""
    solver = ResolventSolver(prob.spec, prob.tau, prob.params, prob.V)
    return solver.solve(prob.F, tol, max_iter, method, initial_guess, allow_fallback)


def resolvent_residual(u: Field, prob: ResolventProblem) -> Field:
    solver = ResolventSolver(prob.spec, prob.tau, prob.params, prob.V)
    return Field(solver.residual(np.array(u.values), np.array(prob.F.values)), prob.spec)


def dense_oracle_solve(prob: ResolventProblem, tol: float, max_iter: int = 100) -> Field:
    """
    Brute-force reference: guarded Newton on the dense real 2n x 2n system.

    Only for small grids (n <= 64) and eps > 0.
    """
    spec = prob.spec
    n = spec.size
    if n > SOLVER_CONFIG['oracle_max_nodes']:
        raise ValueError(f"dense oracle limited to {SOLVER_CONFIG['oracle_max_nodes']} "
                         f"nodes, got {n}")
    params = prob.params
    if params.eps <= 0.0:
        raise ValueError("dense oracle needs eps > 0")

    w = spec.cell_volume
    H = laplacian_matrix(spec).toarray() + np.diag(prob.V.values)
    K = np.eye(n) - 1j * prob.tau * H
    coef = -1j * prob.tau * params.a
    F = np.array(prob.F.values)

    def residual(u):
        return K @ u + coef * g_values(u, params.m, params.eps) - F

    def norm(r):
        return math.sqrt(w * np.vdot(r, r).real)

    u = F.copy()
    r = residual(u)
    rn = norm(r)
    for it in range(max_iter):
        if rn <= tol:
            return Field(u, spec)
        p, q = g_linearization(u, params.m, params.eps)
        M = K + np.diag(coef * p)
        c = coef * q
        J = np.block([[M.real + np.diag(c.real), -M.imag + np.diag(c.imag)],
                      [M.imag + np.diag(c.imag), M.real - np.diag(c.real)]])
        step = np.linalg.solve(J, -np.concatenate([r.real, r.imag]))
        du = step[:n] + 1j * step[n:]
        lam = 1.0
        while lam > 1e-12:
            trial = u + lam * du
            rt = residual(trial)
            rtn = norm(rt)
            if rtn < rn:
                break
            lam *= 0.5
        else:
            break
        u, r, rn = trial, rt, rtn
    if rn <= tol:
        return Field(u, spec)
    raise NonConvergence("dense oracle did not converge", rn, max_iter, 'dense-newton')


def apriori_bound(u: Field, prob: ResolventProblem, tol: float = 0.0) -> Dict[str, object]:
    """
    tau Im(a) int (|u|^2+eps)^(-(1-m)/2)|u|^2 + ||u||^2 <= ||F||^2 on a solve.

    Slack tol * (||u|| + ||F||) accounts for the solver residual.
    """
    spec = prob.spec
    p = prob.params
    absorption = spec.cell_volume * float(np.sum(absorption_density(u.values, p.m, p.eps)))
    un = l2_norm(u.values, spec)
    fn = l2_norm(prob.F.values, spec)
    lhs = prob.tau * p.a.imag * absorption + un ** 2
    rhs = fn ** 2
    ok = lhs <= rhs * (1.0 + SOLVER_CONFIG['apriori_rtol']) + tol * (un + fn)
    return {'lhs': lhs, 'rhs': rhs, 'ok': bool(ok)}


def pairing_identities(u: Field, prob: ResolventProblem) -> Dict[str, float]:
    """
    Both pairings of the resolvent equation with u.

    real part:  ||u||^2 + tau Im(a) absorption = Re <F, u>
    imag part:  tau (||grad u||^2 - int V|u|^2 - Re(a) absorption) = Im <F, u>

    Each residual is bounded by ||R|| ||u|| for the solver residual R.
    """
    spec = prob.spec
    p = prob.params
    values = u.values
    absorption = spec.cell_volume * float(np.sum(absorption_density(values, p.m, p.eps)))
    mass = l2_norm(values, spec) ** 2
    grad2 = h1_seminorm(values, spec) ** 2
    potential = spec.cell_volume * float(np.sum(prob.V.values * np.abs(values) ** 2))
    fu = inner(prob.F.values, values, spec)

    mass_lhs = mass + prob.tau * p.a.imag * absorption
    grad_lhs = prob.tau * (grad2 - potential - p.a.real * absorption)
    return {
        'mass_lhs': mass_lhs,
        'mass_rhs': fu.real,
        'mass_residual': mass_lhs - fu.real,
        'gradient_lhs': grad_lhs,
        'gradient_rhs': fu.imag,
        'gradient_residual': grad_lhs - fu.imag,
    }


def gradient_bound(u: Field, prob: ResolventProblem, tol: float = 0.0) -> Dict[str, object]:
    """tau ||grad u||^2 <= (1 + Re(a)_+/Im(a)) ||F||^2 + tau ||V u|| ||F||"""
    spec = prob.spec
    a = prob.params.a
    fn = l2_norm(prob.F.values, spec)
    lhs = prob.tau * h1_seminorm(u.values, spec) ** 2
    vu = l2_norm(prob.V.values * u.values, spec)
    rhs = (1.0 + max(a.real, 0.0) / a.imag) * fn ** 2 + prob.tau * vu * fn
    ok = lhs <= rhs * (1.0 + SOLVER_CONFIG['apriori_rtol']) + tol * (fn + 1.0)
    return {'lhs': lhs, 'rhs': rhs, 'ok': bool(ok)}


@dataclass
class ContinuationResult:
    """Final iterate of an eps schedule with per-stage reports"""
    u: Field
    schedule: List[float]
    reports: List[SolveReport] = field(default_factory=list)
    increments: List[float] = field(default_factory=list)


def eps_continuation(prob: ResolventProblem, schedule: Sequence[float], tol: float,
                     max_iter: int = None, method: str = 'newton') -> ContinuationResult:
    """
    Solve along a decreasing eps schedule, warm-starting each stage.

    Stages with eps = 0 switch to Picard. Increments ||u_{n+1} - u_n||_2
    between consecutive stages are recorded.
    """
    schedule = [float(e) for e in schedule]
    if not schedule or schedule[0] <= 0.0:
        raise ValueError("schedule must start at a positive eps")
    if any(b >= a for a, b in zip(schedule, schedule[1:])) or schedule[-1] < 0.0:
        raise ValueError("schedule must be strictly decreasing towards eps >= 0")

    result = ContinuationResult(u=prob.F, schedule=schedule)
    previous = None
    for stage, eps in enumerate(schedule):
        stage_prob = prob.with_eps(eps)
        stage_method = method if eps > 0.0 else 'picard'
        try:
            u, report = resolvent_solve(stage_prob, tol, max_iter, stage_method,
                                        initial_guess=previous)
        except NonConvergence as exc:
            exc.stage = stage
            raise
        if previous is not None:
            result.increments.append(l2_norm(u.values - previous.values, prob.spec))
        result.reports.append(report)
        previous = u
        logger.debug("continuation stage %d (eps=%.1e): %d iterations",
                     stage, eps, report.iterations)
    result.u = previous
    return result

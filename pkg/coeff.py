"""
Coefficient Theory Module
Author: Solver Engineer (Person 2)

Scalar parameter theory of the damped NLS equation: membership of the damping
coefficient a in the cone C(m) and on the critical ray D(m), the extinction
exponents delta_l, the smallness threshold eps_star and the smallness check
that guarantees extinction by the forcing cutoff T0.
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from config import CoefficientClass, EXTINCTION_PAIRS, MEMBERSHIP_RTOL

logger = logging.getLogger(__name__)


class CoefficientOutsideC(ValueError):
    """Raised when a coefficient outside C(m) would be integrated"""

    def __init__(self, a: complex, m: float):
        self.a = complex(a)
        self.m = m
        super().__init__(
            f"a = {self.a.real:g}{self.a.imag:+g}i is outside C(m) for m = {m:g}: "
            f"requires Im(a) > 0 and 2*sqrt(m)*Im(a) >= (1-m)*|Re(a)|"
        )


def validate_exponent(m: float) -> float:
    """Return m as a float, rejecting values outside the open interval (0, 1)."""
    m = float(m)
    if not math.isfinite(m) or not 0.0 < m < 1.0:
        raise ValueError(f"exponent m must satisfy 0 < m < 1, got {m}")
    return m


def classify(a: complex, m: float) -> str:
    """
    Classify a damping coefficient against C(m) and D(m).

    The D(m) equality 2*sqrt(m)*Im(a) = (1-m)*Re(a) is tested with relative
    tolerance MEMBERSHIP_RTOL; the C(m) inequality uses the same slack on its
    boundary so that both edges of the cone behave alike.

    Args:
        a (complex): Damping coefficient
        m (float): Absorption exponent in (0, 1)

    Returns:
        str: One of CoefficientClass.IN_D, IN_C_ONLY, OUTSIDE
    """
    a = complex(a)
    m = validate_exponent(m)
    if not (math.isfinite(a.real) and math.isfinite(a.imag)) or a.imag <= 0.0:
        return CoefficientClass.OUTSIDE

    lhs = 2.0 * math.sqrt(m) * a.imag
    ray = (1.0 - m) * a.real
    if abs(lhs - ray) <= MEMBERSHIP_RTOL * max(abs(lhs), abs(ray)):
        return CoefficientClass.IN_D

    cone = (1.0 - m) * abs(a.real)
    if lhs >= cone * (1.0 - MEMBERSHIP_RTOL):
        return CoefficientClass.IN_C_ONLY
    return CoefficientClass.OUTSIDE


def in_cone(a: complex, m: float) -> bool:
    """True when a lies in C(m), the critical ray included."""
    return classify(a, m) != CoefficientClass.OUTSIDE


def require_cone(a: complex, m: float) -> str:
    """Classify a and raise CoefficientOutsideC when it cannot be integrated."""
    label = classify(a, m)
    if label == CoefficientClass.OUTSIDE:
        raise CoefficientOutsideC(a, m)
    return label


def make_dm_coefficient(m: float, re: float) -> complex:
    """Point of the critical ray D(m) with real part re > 0."""
    m = validate_exponent(m)
    re = float(re)
    if not math.isfinite(re) or re <= 0.0:
        raise ValueError(f"real part must be positive, got {re}")
    return complex(re, (1.0 - m) * re / (2.0 * math.sqrt(m)))


def _check_pair(N: int, ell: int) -> None:
    if ell not in EXTINCTION_PAIRS or N not in EXTINCTION_PAIRS[ell]:
        raise ValueError(
            f"(N, l) = ({N}, {ell}) is not covered by the extinction results; "
            f"allowed: l=1 with N in 1..3, l=2 with N in 1..5"
        )


def delta(N: int, ell: int, m: float) -> float:
    """Extinction exponent delta_l = ((N+2l) - m(N-2l)) / (4l)."""
    m = validate_exponent(m)
    _check_pair(N, ell)
    return ((N + 2 * ell) - m * (N - 2 * ell)) / (4.0 * ell)


def gn_exponents(N: int, ell: int, m: float) -> Tuple[float, float]:
    """
    Exponents of the Gagliardo-Nirenberg inequality linking mass to absorption.

    ||v||_2^theta <= C ||v||_{m+1}^{m+1} ||grad^l v||_2^kappa

    Returns:
        tuple: (theta, kappa) with theta = 2*delta_l and kappa = N(1-m)/(2l)
    """
    d = delta(N, ell, m)
    return 2.0 * d, N * (1.0 - m) / (2.0 * ell)


def eps_star(alpha: float, delta_value: float) -> float:
    """
    Smallness threshold eps_star(alpha, delta).

    Minimum of the two closed-form expressions bounding the admissible
    smallness constant; only defined for 1/2 < delta < 1.
    """
    alpha = float(alpha)
    d = float(delta_value)
    if not alpha > 0.0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if not 0.5 < d < 1.0:
        raise ValueError(f"delta must lie in (1/2, 1), got {d}")

    first = (
        (2.0 * d - 1.0) ** (-(2.0 * d - 1.0) / d)
        * (alpha * d) ** (1.0 / (1.0 - d))
        * (1.0 - d) ** ((2.0 * d - 1.0) / (d * (1.0 - d)))
    )
    second = alpha * d * (1.0 - d)
    return min(first, second)


def young_thresholds(alpha: float, delta_value: float, T0: float) -> Tuple[float, float]:
    """
    Thresholds of the Young-inequality refinement of the comparison ODE.

    Returns:
        tuple: (x_star, y_star) with x_star = (alpha*delta*(1-delta)*T0)^(1/(1-delta))
            and y_star = (alpha*delta^delta*(1-delta))^(1/(1-delta))
    """
    d = float(delta_value)
    if not 0.5 < d < 1.0:
        raise ValueError(f"delta must lie in (1/2, 1), got {d}")
    if alpha <= 0.0 or T0 < 0.0:
        raise ValueError("alpha must be positive and T0 nonnegative")
    power = 1.0 / (1.0 - d)
    x_star = (alpha * d * (1.0 - d) * T0) ** power
    y_star = (alpha * d ** d * (1.0 - d)) ** power
    return x_star, y_star


@dataclass(frozen=True)
class ExtinctionExponents:
    """Exponents and rates entering the comparison envelope"""
    N: int
    ell: int
    delta: float
    alpha: float                    # Im(a) / C_GN
    alpha_ell: float                # alpha * sup||grad^l u||^(-kappa)
    eps_star: Optional[float] = None

    def to_dict(self) -> Dict[str, Optional[float]]:
        return {
            'N': self.N,
            'ell': self.ell,
            'delta': self.delta,
            'alpha': self.alpha,
            'alpha_ell': self.alpha_ell,
            'eps_star': self.eps_star,
        }


def extinction_exponents(N: int, ell: int, m: float, a: complex,
                         c_gn: float, sup_grad: float) -> ExtinctionExponents:
    """
    Assemble delta_l, alpha, alpha_l and (when defined) eps_star.

    Args:
        N (int): Space dimension
        ell (int): 1 for the gradient form, 2 for the Laplacian form
        m (float): Absorption exponent
        a (complex): Damping coefficient with Im(a) > 0
        c_gn (float): Gagliardo-Nirenberg constant (run-derived)
        sup_grad (float): Supremum of ||grad^l u||_2 over the trajectory
    """
    a = complex(a)
    if a.imag <= 0.0:
        raise CoefficientOutsideC(a, m)
    if not c_gn > 0.0 or not sup_grad > 0.0:
        raise ValueError("C_GN and the gradient supremum must be positive")

    d = delta(N, ell, m)
    _, kappa = gn_exponents(N, ell, m)
    alpha = a.imag / c_gn
    alpha_ell = alpha * sup_grad ** (-kappa)
    star = eps_star(alpha, d) if 0.5 < d < 1.0 else None
    return ExtinctionExponents(N, ell, d, alpha, alpha_ell, star)


@dataclass
class SmallnessReport:
    """Per-condition verdict of the smallness check"""
    mass_condition: bool
    data_condition: bool
    forcing_condition: bool
    mass_lhs: float
    mass_rhs: float
    data_lhs: float
    worst_forcing_ratio: float      # max over samples of ||f||^2 / envelope
    young_mass_ok: Optional[bool] = None
    details: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.mass_condition and self.data_condition and self.forcing_condition

    def to_dict(self) -> Dict[str, object]:
        return {
            'passed': self.passed,
            'mass_condition': self.mass_condition,
            'data_condition': self.data_condition,
            'forcing_condition': self.forcing_condition,
            'mass_lhs': self.mass_lhs,
            'mass_rhs': self.mass_rhs,
            'data_lhs': self.data_lhs,
            'worst_forcing_ratio': self.worst_forcing_ratio,
            'young_mass_ok': self.young_mass_ok,
        }


def smallness_check(u0_mass: float, u0_gradnorm_or_starnorm: float,
                    forcing_budget: float, f_profile: Callable[[float], float],
                    T0: float, eps_star_value: float, delta_value: float,
                    times: Optional[Sequence[float]] = None,
                    alpha: Optional[float] = None) -> SmallnessReport:
    """
    Evaluate the three smallness conditions under which extinction occurs by T0.

    1. y(0)^(1-delta) <= eps_star * T0, with y(0) = ||u0||_2^2
    2. ||u0||_{grad or star} + forcing budget <= eps_star
    3. ||f(t)||_2^2 <= eps_star * (T0 - t)_+^((2 delta - 1)/(1 - delta)) on the samples

    Every comparison carries relative slack MEMBERSHIP_RTOL.

    Args:
        u0_mass (float): ||u0||_2^2
        u0_gradnorm_or_starnorm (float): ||grad u0||_2 (or the dual norm)
        forcing_budget (float): Integrated forcing norm
        f_profile (callable): t -> ||f(t)||_2
        T0 (float): Forcing cutoff
        eps_star_value (float): Threshold from eps_star()
        delta_value (float): delta_l in (1/2, 1)
        times (sequence): Sample times for condition 3 (default: 101 points on [0, T0])
        alpha (float): When given, also reports the Young-refinement mass threshold

    Returns:
        SmallnessReport: Flags per condition
    """
    d = float(delta_value)
    if not 0.5 < d < 1.0:
        raise ValueError(f"delta must lie in (1/2, 1), got {d}")
    slack = 1.0 + MEMBERSHIP_RTOL

    mass_lhs = float(u0_mass) ** (1.0 - d)
    mass_rhs = eps_star_value * T0
    mass_ok = mass_lhs <= mass_rhs * slack

    data_lhs = float(u0_gradnorm_or_starnorm) + float(forcing_budget)
    data_ok = data_lhs <= eps_star_value * slack

    if times is None:
        times = np.linspace(0.0, T0, 101)
    power = (2.0 * d - 1.0) / (1.0 - d)
    forcing_ok = True
    worst = 0.0
    for t in times:
        lhs = float(f_profile(float(t))) ** 2
        rhs = eps_star_value * max(T0 - float(t), 0.0) ** power
        if lhs > rhs * slack:
            forcing_ok = False
        if rhs > 0.0:
            worst = max(worst, lhs / rhs)
        elif lhs > 0.0:
            worst = math.inf

    young_ok = None
    if alpha is not None and T0 > 0.0:
        x_star, _ = young_thresholds(alpha, d, T0)
        young_ok = float(u0_mass) <= x_star * slack

    report = SmallnessReport(mass_ok, data_ok, forcing_ok, mass_lhs, mass_rhs,
                             data_lhs, worst, young_ok)
    logger.debug("smallness check: mass %s, data %s, forcing %s",
                 mass_ok, data_ok, forcing_ok)
    return report

"""
Nonlinearity Module
Author: Solver Engineer (Person 2)

Saturating absorption g_eps(z) = (|z|^2 + eps)^(-(1-m)/2) z, its
linearization for Newton solves, and the pointwise certificates (Holder
bound, accretivity witness) behind the monotonicity of the operator.
"""

import math
import logging
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from coeff import classify, validate_exponent
from grid import Field, check_same_grid, lp_norm

logger = logging.getLogger(__name__)

HOLDER_CONSTANT = 3.0
HOLDER_RTOL = 1e-12


@dataclass(frozen=True)
class AbsorptionParams:
    """Exponent m, damping coefficient a and regularization eps >= 0"""
    m: float
    a: complex
    eps: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, 'm', validate_exponent(self.m))
        object.__setattr__(self, 'a', complex(self.a))
        eps = float(self.eps)
        if not math.isfinite(eps) or eps < 0.0:
            raise ValueError(f"regularization eps must be >= 0, got {eps}")
        object.__setattr__(self, 'eps', eps)

    @property
    def classification(self) -> str:
        return classify(self.a, self.m)

    def with_eps(self, eps: float) -> 'AbsorptionParams':
        return AbsorptionParams(self.m, self.a, eps)


def _phi(s: np.ndarray, m: float, eps: float) -> np.ndarray:
    """(s + eps)^(-(1-m)/2), with 0 returned where s + eps = 0"""
    base = np.asarray(s, dtype=np.float64) + eps
    out = np.zeros_like(base)
    pos = base > 0.0
    out[pos] = np.exp(-0.5 * (1.0 - m) * np.log(base[pos]))
    return out


def g_values(z: np.ndarray, m: float, eps: float) -> np.ndarray:
    """Pointwise g_eps on an array; g(0) = 0 for every eps"""
    z = np.asarray(z, dtype=np.complex128)
    s = z.real ** 2 + z.imag ** 2
    return _phi(s, m, eps) * z


def g_eps(u: Field, params: AbsorptionParams) -> Field:
    return Field(g_values(u.values, params.m, params.eps), u.spec)


def absorption_density(z: np.ndarray, m: float, eps: float) -> np.ndarray:
    """(|z|^2 + eps)^(-(1-m)/2) |z|^2, the integrand of the absorption ledger"""
    z = np.asarray(z, dtype=np.complex128)
    s = z.real ** 2 + z.imag ** 2
    return _phi(s, m, eps) * s


def g_linearization(z: np.ndarray, m: float, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Wirtinger derivatives of g_eps: dg = p dz + q conj(dz).

    p = phi + phi' |z|^2 and q = phi' z^2 with phi(s) = (s + eps)^(-(1-m)/2).
    Requires eps > 0.
    """
    if eps <= 0.0:
        raise ValueError("the linearization needs eps > 0")
    z = np.asarray(z, dtype=np.complex128)
    s = z.real ** 2 + z.imag ** 2
    k = 0.5 * (1.0 - m)
    phi = np.exp(-k * np.log(s + eps))
    dphi = -k * phi / (s + eps)
    return phi + dphi * s, dphi * z * z


def holder_certificate(u: Field, v: Field, p: float, m: float) -> Dict[str, object]:
    """
    Discrete Holder bound ||g(u) - g(v)||_{p/m} <= 3 ||u - v||_p^m for eps = 0.

    Returns:
        dict: lhs, rhs and pass flag (lhs <= rhs * (1 + 1e-12))
    """
    m = validate_exponent(m)
    if not p >= 1.0:
        raise ValueError(f"p must be >= 1, got {p}")
    spec = check_same_grid(u.spec, v.spec)
    diff_g = g_values(u.values, m, 0.0) - g_values(v.values, m, 0.0)
    lhs = lp_norm(diff_g, spec, p / m)
    rhs = HOLDER_CONSTANT * lp_norm(u.values - v.values, spec, p) ** m
    return {'lhs': lhs, 'rhs': rhs, 'pass': bool(lhs <= rhs * (1.0 + HOLDER_RTOL))}


def accretivity_witness(z1, z2, a: complex, m: float) -> np.ndarray:
    """
    Re[-i a (g(z1) - g(z2)) conj(z1 - z2)] with g = g_0, vectorized.

    Evaluated through P = z1 conj(z2) and phi_k = |z_k|^(m-1):
    Re w = phi1|z1|^2 + phi2|z2|^2 - (phi1 + phi2) Re P,
    Im w = (phi2 - phi1) Im P, witness = Im(a) Re w + Re(a) Im w,
    which avoids cancellation in g(z1) - g(z2) for nearby points.
    """
    m = validate_exponent(m)
    a = complex(a)
    z1 = np.asarray(z1, dtype=np.complex128)
    z2 = np.asarray(z2, dtype=np.complex128)
    s1 = z1.real ** 2 + z1.imag ** 2
    s2 = z2.real ** 2 + z2.imag ** 2
    phi1 = _phi(s1, m, 0.0)
    phi2 = _phi(s2, m, 0.0)
    P = z1 * np.conj(z2)
    re_w = phi1 * s1 + phi2 * s2 - (phi1 + phi2) * P.real
    im_w = (phi2 - phi1) * P.imag
    return a.imag * re_w + a.real * im_w


def accretivity_lattice_min(a: complex, m: float, radius: float = 4.0,
                            points: int = 17) -> float:
    """Minimum witness over all pairs of a square complex lattice of half-width radius"""
    axis = np.linspace(-radius, radius, points)
    zs = (axis[:, None] + 1j * axis[None, :]).ravel()
    zs = zs[np.abs(zs) <= radius]
    z1, z2 = np.meshgrid(zs, zs, indexing='ij')
    return float(np.min(accretivity_witness(z1.ravel(), z2.ravel(), a, m)))

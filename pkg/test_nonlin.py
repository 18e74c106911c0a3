"""
Unit tests for the saturating absorption and its certificates.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from coeff import make_dm_coefficient
from grid import Field, GridSpec
from nonlin import (AbsorptionParams, absorption_density, accretivity_lattice_min,
                    accretivity_witness, g_eps, g_linearization, g_values, holder_certificate)

SPEC = GridSpec((1.0,), (16,))


def random_complex(rng, size, scale=1.0):
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def cone_coefficient(rng, m):
    """Random a strictly inside C(m)"""
    re = rng.uniform(-5.0, 5.0)
    edge = (1.0 - m) * abs(re) / (2.0 * math.sqrt(m))
    return complex(re, edge * rng.uniform(1.01, 3.0) + 1e-3)


def test_params_validation():
    p = AbsorptionParams(0.5, 1 + 0.5j, 1e-6)
    assert p.with_eps(0.0).eps == 0.0
    with pytest.raises(ValueError):
        AbsorptionParams(0.5, 1j, -1.0)
    with pytest.raises(ValueError):
        AbsorptionParams(1.0, 1j)


@pytest.mark.parametrize("eps", [0.0, 1e-12, 1e-3])
def test_g_vanishes_at_origin(eps):
    values = g_values(np.zeros(5, dtype=complex), 0.5, eps)
    assert np.all(values == 0.0)


def test_g_modulus_and_phase():
    rng = np.random.default_rng(0)
    z = random_complex(rng, 1000, 3.0)
    g = g_values(z, 0.3, 0.0)
    assert np.allclose(np.abs(g), np.abs(z) ** 0.3, rtol=1e-12)
    assert np.allclose(np.angle(g), np.angle(z), atol=1e-12), "g keeps the phase of z"
    assert np.allclose(absorption_density(z, 0.3, 0.0), np.abs(z) ** 1.3, rtol=1e-12)

    u = Field(z[:16], SPEC)
    assert np.allclose(g_eps(u, AbsorptionParams(0.3, 1j, 0.0)).values, g[:16])


def test_linearization_matches_finite_differences():
    rng = np.random.default_rng(1)
    m, eps = 0.5, 1e-3
    z = random_complex(rng, 200)
    dz = random_complex(rng, 200, 1e-7)
    p, q = g_linearization(z, m, eps)
    exact = g_values(z + dz, m, eps) - g_values(z, m, eps)
    linear = p * dz + q * np.conj(dz)
    err = np.abs(exact - linear) / np.abs(dz)
    assert err.max() < 1e-4, f"max relative linearization error {err.max():.2e}"
    with pytest.raises(ValueError):
        g_linearization(z, m, 0.0)


@pytest.mark.parametrize("m", [0.25, 0.5, 0.75])
def test_holder_certificate(m):
    """||g(u) - g(v)||_{p/m} <= 3 ||u - v||_p^m on random field pairs."""
    rng = np.random.default_rng(int(100 * m))
    for p in (2.0, m + 1.0, 4.0):
        for _ in range(1000):
            scale = 10.0 ** rng.uniform(-3, 2)
            u = Field(random_complex(rng, SPEC.size, scale), SPEC)
            v = Field(u.values + random_complex(rng, SPEC.size, scale * rng.uniform(0, 1)),
                      SPEC)
            cert = holder_certificate(u, v, p, m)
            assert cert['pass'], f"m={m}, p={p}: lhs {cert['lhs']} > rhs {cert['rhs']}"
    print(f"✓ Hölder certificate holds for m = {m}")


def test_witness_matches_direct_formula():
    rng = np.random.default_rng(2)
    m = 0.4
    a = make_dm_coefficient(m, 1.3)
    z1 = random_complex(rng, 500)
    z2 = random_complex(rng, 500)
    direct = (-1j * a * (g_values(z1, m, 0.0) - g_values(z2, m, 0.0))
              * np.conj(z1 - z2)).real
    witness = accretivity_witness(z1, z2, a, m)
    assert np.allclose(witness, direct, rtol=1e-10, atol=1e-12)


def test_accretivity_sampling():
    """10^5 random pairs for each of 20 random (m, a in C(m))."""
    rng = np.random.default_rng(3)
    worst = math.inf
    for _ in range(20):
        m = rng.uniform(0.05, 0.95)
        a = cone_coefficient(rng, m)
        z1 = random_complex(rng, 100_000, 2.0)
        z2 = random_complex(rng, 100_000, 2.0)
        witness = accretivity_witness(z1, z2, a, m)
        worst = min(worst, float(witness.min()))
    assert worst >= -1e-14, f"negative witness {worst:.3e}"
    print(f"✓ accretivity witness minimum {worst:.3e}")


@settings(max_examples=25, deadline=None)
@given(m=st.floats(min_value=0.05, max_value=0.95), re=st.floats(min_value=0.1, max_value=10.0))
def test_lattice_minimum_on_critical_ray(m, re):
    a = make_dm_coefficient(m, re)
    assert accretivity_lattice_min(a, m, radius=2.0, points=9) >= -1e-12


def test_witness_detects_non_accretive_coefficient():
    """Im(a) < 0 makes the pair (1, 0) dissipate the wrong way."""
    value = accretivity_witness(np.array([1.0 + 0j]), np.array([0j]), 1 - 1j, 0.5)
    assert value[0] < 0.0
    assert accretivity_lattice_min(1 - 1j, 0.5, radius=1.0, points=5) < 0.0

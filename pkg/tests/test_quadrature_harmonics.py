import math

import numpy as np
import pytest
from scipy.integrate import dblquad

from sqgfem.fem import load_vector
from sqgfem.harmonics import harmonic_indices, real_sph_harm
from sqgfem.quadrature import triangle_rule


@pytest.mark.parametrize("degree", range(0, 9))
def test_rule_exact_for_monomials(degree):
    bary, w = triangle_rule(degree)
    assert w.sum() == pytest.approx(1.0, rel=1e-14)
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            c = degree - a - b
            # int over the reference simplex of l0^a l1^b l2^c, normalised by its area 1/2
            exact = 2.0 * math.factorial(a) * math.factorial(b) * math.factorial(c) / math.factorial(degree + 2)
            got = w @ (bary[:, 0] ** a * bary[:, 1] ** b * bary[:, 2] ** c)
            assert got == pytest.approx(exact, rel=1e-13)


def test_harmonic_enumeration():
    assert harmonic_indices(9) == [(1, -1), (1, 0), (1, 1), (2, -2), (2, -1), (2, 0), (2, 1), (2, 2), (3, -3)]
    assert harmonic_indices(2, include_constant=True) == [(0, 0), (1, -1)]


def _on_sphere(theta, phi):
    return np.stack([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)], axis=-1)


@pytest.mark.parametrize("l, m", [(1, 0), (1, 1), (2, -2), (2, 1), (3, -3)])
def test_harmonic_closed_forms(l, m):
    t, p = np.meshgrid(np.linspace(0.1, 3.0, 7), np.linspace(-3.0, 3.0, 9))
    x = _on_sphere(t, p)
    forms = {
        (1, 0): math.sqrt(3 / (4 * math.pi)) * x[..., 2],
        (1, 1): math.sqrt(3 / (4 * math.pi)) * x[..., 0],
        (2, -2): 0.5 * math.sqrt(15 / math.pi) * x[..., 0] * x[..., 1],
        (2, 1): 0.5 * math.sqrt(15 / math.pi) * x[..., 0] * x[..., 2],
        (3, -3): 0.25 * math.sqrt(35 / (2 * math.pi)) * (3 * x[..., 0] ** 2 - x[..., 1] ** 2) * x[..., 1],
    }
    assert np.allclose(real_sph_harm(l, m, x), forms[(l, m)], atol=1e-14)


def test_harmonics_orthonormal():
    pairs = harmonic_indices(9)
    gram = np.empty((9, 9))
    for i, a in enumerate(pairs):
        for j, b in enumerate(pairs[i:], start=i):
            f = lambda p, t: real_sph_harm(*a, _on_sphere(t, p)) * real_sph_harm(*b, _on_sphere(t, p)) * np.sin(t)
            gram[i, j] = gram[j, i] = dblquad(f, 0, math.pi, -math.pi, math.pi, epsabs=1e-11)[0]
    assert np.allclose(gram, np.eye(9), atol=1e-9)


def test_harmonic_rejects_bad_order():
    with pytest.raises(ValueError):
        real_sph_harm(1, 2, np.array([0.0, 0.0, 1.0]))


def test_load_vector_of_constant_is_area_vector(operators):
    ops = operators[2]
    assert np.allclose(load_vector(ops.mesh, lambda x: np.ones(x.shape[:-1])), ops.area_vector, rtol=1e-13)

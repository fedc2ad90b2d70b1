import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sqgfem.errors import InvalidArgumentError
from sqgfem.fem import Field, interpolate, l2_project, perp_advection_apply
from sqgfem.harmonics import real_sph_harm


def _brute_advection(mesh, q, chi):
    """Cell loop with gradients from a fresh affine solve and a 3-point edge-midpoint rule."""
    v = np.zeros(mesh.n_vertices)
    mids = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
    for tri in mesh.triangles:
        p = mesh.vertices[tri]
        cross = np.cross(p[1] - p[0], p[2] - p[0])
        area = 0.5 * np.linalg.norm(cross)
        n = cross / (2 * area)
        rows = np.array([p[1] - p[0], p[2] - p[0], n])
        grads = np.array([np.linalg.solve(rows, [e[1] - e[0], e[2] - e[0], 0.0]) for e in np.eye(3)])
        perp_chi = np.cross(n, chi[tri] @ grads)
        q_at = mids @ q[tri]
        for a in range(3):
            v[tri[a]] += area * q_at.mean() * (grads[a] @ perp_chi)
    return v


def test_mass_row_sums_and_area_vector(operators):
    for ops in operators.values():
        rows = np.asarray(ops.mass.sum(axis=1)).ravel()
        assert np.allclose(rows, ops.lumped_mass, rtol=1e-13, atol=0)
        assert ops.area_vector.sum() == pytest.approx(ops.mesh.total_area, rel=1e-13)
        assert np.allclose(ops.mass @ np.ones(ops.n), ops.area_vector, rtol=1e-13)


def test_symmetry_is_exact(operators):
    for ops in operators.values():
        assert (ops.mass != ops.mass.T).nnz == 0
        assert (ops.stiffness != ops.stiffness.T).nnz == 0


def test_stiffness_kills_constants(operators):
    for ops in operators.values():
        assert np.abs(ops.stiffness @ np.ones(ops.n)).max() <= 1e-12


def test_mass_diagonal_on_icosahedron(operators):
    ops = operators[0]
    cell_area = ops.mesh.areas[0]
    assert np.allclose(ops.mass.diagonal(), 5 * cell_area / 6, rtol=1e-14)


def test_constant_field_enstrophy(operators):
    ops = operators[2]
    c = 1.7
    assert ops.enstrophy(np.full(ops.n, c)) == pytest.approx(0.5 * c * c * ops.total_area, rel=1e-13)


def test_definiteness(operators, rng):
    ops = operators[2]
    for _ in range(20):
        x = rng.standard_normal(ops.n)
        assert x @ (ops.mass @ x) > 0
        assert x @ (ops.stiffness @ x) > 0
    eig = np.linalg.eigvalsh(ops.stiffness.toarray())
    assert abs(eig[0]) < 1e-12 and eig[1] > 1e-3


def test_advection_matches_brute_force(operators, rng):
    ops = operators[0]
    for _ in range(5):
        q, chi = rng.standard_normal(ops.n), rng.standard_normal(ops.n)
        ref = _brute_advection(ops.mesh, q, chi)
        got = perp_advection_apply(chi, q, ops)
        assert np.abs(got - ref).max() <= 1e-13 * np.abs(ref).max()


def test_advection_matrices_agree(operators, rng):
    ops = operators[2]
    q, chi = rng.standard_normal(ops.n), rng.standard_normal(ops.n)
    v = ops.advection(q, chi)
    assert np.allclose(ops.advection_matrix_q(chi) @ q, v, atol=1e-13)
    assert np.allclose(ops.advection_matrix_chi(q) @ chi, v, atol=1e-13)


def test_advection_trivial_cases(operators, rng):
    ops = operators[1]
    chi = rng.standard_normal(ops.n)
    assert np.array_equal(perp_advection_apply(np.zeros(ops.n), rng.standard_normal(ops.n), ops), np.zeros(ops.n))
    assert np.abs(perp_advection_apply(chi, np.full(ops.n, 3.0), ops)).max() <= 1e-13


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 3), st.integers(0, 2**31 - 1))
def test_antisymmetry_property(operators, r, seed):
    ops = operators[r]
    g = np.random.default_rng(seed)
    q, chi = g.standard_normal(ops.n), g.standard_normal(ops.n)
    gam = g.standard_normal(ops.n)
    grad_chi = np.einsum("ckd,ck->cd", ops.mesh.gradients, chi[ops.mesh.triangles])
    perp_norm = np.linalg.norm(grad_chi, axis=1).max()
    lhs = q @ ops.advection(q, chi)
    assert abs(lhs) <= 1e-12 * (q @ q) * perp_norm
    # B(q, gamma) + B(gamma, q) = 0 for the bilinear form in (q, gamma)
    a = ops.advection_matrix_q(chi)
    assert abs(gam @ (a @ q) + q @ (a @ gam)) <= 1e-12 * np.linalg.norm(q) * np.linalg.norm(gam) * perp_norm


def test_mesh_mismatch_rejected(operators, meshes):
    ops = operators[1]
    other = Field(np.zeros(meshes[2].n_vertices), meshes[2])
    with pytest.raises(InvalidArgumentError):
        perp_advection_apply(other, np.zeros(ops.n), ops)
    with pytest.raises(InvalidArgumentError):
        perp_advection_apply(np.zeros(3), np.zeros(ops.n), ops)


def test_field_validation(meshes):
    with pytest.raises(InvalidArgumentError):
        Field(np.zeros(5), meshes[0])
    bad = np.zeros(12)
    bad[3] = np.nan
    with pytest.raises(InvalidArgumentError):
        Field(bad, meshes[0])


def test_projection_of_constant(operators):
    ops = operators[2]
    c = l2_project(lambda x: np.ones(x.shape[:-1]), ops).coefficients
    assert np.abs(c - 1).max() <= 1e-12


def test_projection_of_sin_latitude_is_second_order(operators):
    devs = []
    for r in (2, 3, 4):
        ops = operators[r]
        c = l2_project(lambda x: x[..., 2], ops).coefficients
        devs.append(np.abs(c - interpolate(lambda x: x[:, 2], ops.mesh).coefficients).max())
    assert devs[0] / devs[1] > 3.0 and devs[1] / devs[2] > 3.0


def test_projection_preserves_zero_mean(operators):
    ops = operators[3]
    for l, m in [(1, 0), (2, -1), (3, 2)]:
        c = l2_project(lambda x: real_sph_harm(l, m, x), ops).coefficients
        assert abs(ops.area_vector @ c) <= 1e-12

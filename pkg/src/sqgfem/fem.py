"""P1 continuous Galerkin operators on a :class:`~sqgfem.mesh.SphereMesh`.

All forms are integrated exactly on the flat cells: the mass matrix with the
closed-form P1 element matrix, the stiffness matrix from the constant
gradients, and the perp-advection form cell by cell with the exact average
of the linear PV factor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgumentError, NumericalError
from .mesh import SphereMesh
from .quadrature import triangle_rule

__all__ = [
    "Field",
    "Operators",
    "assemble_operators",
    "perp_advection_apply",
    "l2_project",
    "interpolate",
]

_LOCAL_MASS = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal P1 coefficients on a mesh."""

    coefficients: np.ndarray
    mesh: SphereMesh

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.shape != (self.mesh.n_vertices,):
            raise InvalidArgumentError(
                f"field has {c.shape} coefficients, mesh has {self.mesh.n_vertices} vertices"
            )
        if not np.all(np.isfinite(c)):
            raise InvalidArgumentError("field coefficients must be finite")
        object.__setattr__(self, "coefficients", c)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coefficients, dtype=dtype)

    def __len__(self):
        return len(self.coefficients)


class _Scatter:
    """Fixed COO -> CSR summation pattern, reused for every re-assembly.

    ``build(local)`` takes per-cell 3x3 blocks and returns a CSR matrix whose
    duplicate entries are summed in a fixed order.
    """

    def __init__(self, triangles: np.ndarray, n: int):
        rows = np.repeat(triangles, 3, axis=1).ravel()
        cols = np.tile(triangles, (1, 3)).ravel()
        order = np.lexsort((cols, rows))
        keys = rows[order] * n + cols[order]
        starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
        self.order = order
        self.starts = starts
        self.indices = (keys[starts] % n).astype(np.int32)
        urows = keys[starts] // n
        self.indptr = np.searchsorted(urows, np.arange(n + 1)).astype(np.int32)
        self.n = n

    def data(self, local: np.ndarray) -> np.ndarray:
        return np.add.reduceat(local.reshape(-1)[self.order], self.starts)

    def build(self, local: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.data(local), self.indices, self.indptr), shape=(self.n, self.n)
        )


@dataclass(frozen=True, eq=False)
class Operators:
    """Assembled P1 operators.

    ``mass`` and ``stiffness`` are CSR matrices with identical sparsity;
    ``perp`` holds, per cell, the antisymmetric 3x3 array
    ``grad(phi_i) . (n x grad(phi_j))``.
    """

    mesh: SphereMesh
    mass: sp.csr_matrix
    lumped_mass: np.ndarray
    stiffness: sp.csr_matrix
    area_vector: np.ndarray
    perp: np.ndarray = field(repr=False)
    scatter: _Scatter = field(repr=False)

    @property
    def n(self) -> int:
        return self.mesh.n_vertices

    @property
    def total_area(self) -> float:
        return float(self.area_vector.sum())

    @cached_property
    def mass_lu(self):
        return spla.splu(self.mass.tocsc())

    def solve_mass(self, rhs: np.ndarray) -> np.ndarray:
        return self.mass_lu.solve(np.asarray(rhs, dtype=float))

    def pi(self, q) -> float:
        """Total PV, ``b . Q``."""
        return float(self.area_vector @ np.asarray(q))

    def enstrophy(self, q) -> float:
        """``0.5 Q^T M Q``."""
        q = np.asarray(q)
        return 0.5 * float(q @ (self.mass @ q))

    def lumped_enstrophy(self, q) -> float:
        q = np.asarray(q)
        return 0.5 * float(np.sum(self.lumped_mass * q * q))

    def load(self, g) -> np.ndarray:
        """Load vector ``r_i = int phi_i g`` of a P1 field ``g``."""
        return self.mass @ np.asarray(g, dtype=float)

    # -- perp-advection form -------------------------------------------------

    def cell_velocity_coefficients(self, chi: np.ndarray) -> np.ndarray:
        """Per cell, ``w_i = grad(phi_i) . perp-grad(chi)`` for the 3 local nodes."""
        chi_loc = chi[self.mesh.triangles]
        return np.einsum("cij,cj->ci", self.perp, chi_loc)

    def advection_matrix_q(self, chi: np.ndarray) -> sp.csr_matrix:
        """Matrix ``A`` with ``A @ q = v(q, chi)`` (linear in ``q``)."""
        w = self.cell_velocity_coefficients(chi)
        local = (self.mesh.areas[:, None] / 3.0) * w  # (nc, 3) rows
        local = np.repeat(local[:, :, None], 3, axis=2)
        return self.scatter.build(local)

    def advection_matrix_chi(self, q: np.ndarray) -> sp.csr_matrix:
        """Matrix ``C`` with ``C @ chi = v(q, chi)`` (linear in ``chi``)."""
        qbar = q[self.mesh.triangles].mean(axis=1)
        local = (self.mesh.areas * qbar)[:, None, None] * self.perp
        return self.scatter.build(local)

    def advection(self, q: np.ndarray, chi: np.ndarray) -> np.ndarray:
        """``v_i = int q grad(phi_i) . perp-grad(chi)``."""
        tri = self.mesh.triangles
        qbar = q[tri].mean(axis=1)
        w = self.cell_velocity_coefficients(chi) * (self.mesh.areas * qbar)[:, None]
        return np.bincount(tri.ravel(), weights=w.ravel(), minlength=self.n)


def assemble_operators(mesh: SphereMesh) -> Operators:
    """Assemble mass, lumped mass, stiffness and area vector for ``mesh``."""
    n = mesh.n_vertices
    areas = mesh.areas
    grads = mesh.gradients
    normals = mesh.normals
    scatter = _Scatter(mesh.triangles, n)

    mass_local = areas[:, None, None] * _LOCAL_MASS[None]
    stiff_local = areas[:, None, None] * np.einsum("cid,cjd->cij", grads, grads)
    mass = scatter.build(mass_local)
    stiffness = scatter.build(stiff_local)
    # identical local values for (i, j) and (j, i); averaging with the
    # transpose is a bitwise no-op except for making symmetry explicit
    mass = ((mass + mass.T) * 0.5).tocsr()
    stiffness = ((stiffness + stiffness.T) * 0.5).tocsr()
    mass.sort_indices()
    stiffness.sort_indices()

    lumped = np.asarray(mass.sum(axis=1)).ravel()
    area_vector = np.bincount(
        mesh.triangles.ravel(), weights=np.repeat(areas / 3.0, 3), minlength=n
    )
    perp_grads = np.cross(normals[:, None, :], grads)  # n x grad(phi_j)
    perp = np.einsum("cid,cjd->cij", grads, perp_grads)
    perp = 0.5 * (perp - perp.transpose(0, 2, 1))  # exact antisymmetry

    for arr in (lumped, area_vector, perp):
        arr.setflags(write=False)
    return Operators(
        mesh=mesh,
        mass=mass,
        lumped_mass=lumped,
        stiffness=stiffness,
        area_vector=area_vector,
        perp=perp,
        scatter=scatter,
    )


def perp_advection_apply(chi, q_mid, ops: Operators) -> np.ndarray:
    """Apply the perp-advection form: ``v_i = int q_mid grad(phi_i) . n x grad(chi)``.

    ``chi`` is the combined transport stream function
    ``dt * psi + sum_i dW_i * xi_i``.
    """
    arrays = []
    for f in (chi, q_mid):
        if isinstance(f, Field) and f.mesh is not ops.mesh:
            raise InvalidArgumentError("fields live on different meshes")
        a = np.asarray(f, dtype=float)
        if a.shape != (ops.n,):
            raise InvalidArgumentError(f"expected {ops.n} coefficients, got shape {a.shape}")
        arrays.append(a)
    return ops.advection(arrays[1], arrays[0])


def quadrature_points(mesh: SphereMesh, degree: int):
    """Quadrature points on the flat cells and their weights (areas included).

    Returns ``(bary, points, weights)`` with ``points`` of shape (nc, nq, 3).
    """
    bary, w = triangle_rule(degree)
    p = mesh.vertices[mesh.triangles]
    points = np.einsum("qk,ckd->cqd", bary, p)
    weights = mesh.areas[:, None] * w[None, :]
    return bary, points, weights


def load_vector(mesh: SphereMesh, g: Callable[[np.ndarray], np.ndarray], degree: int = 6) -> np.ndarray:
    """``r_i = int phi_i g`` with ``g`` evaluated at quadrature points pushed to the sphere."""
    bary, points, weights = quadrature_points(mesh, degree)
    on_sphere = points / np.linalg.norm(points, axis=2, keepdims=True)
    values = np.asarray(g(on_sphere), dtype=float)
    if values.shape != points.shape[:2]:
        values = np.broadcast_to(values, points.shape[:2])
    local = np.einsum("cq,qk->ck", values * weights, bary)
    return np.bincount(
        mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_vertices
    )


def l2_project(
    g: Callable[[np.ndarray], np.ndarray],
    ops: Operators,
    degree: int = 6,
    rtol: float = 1e-12,
) -> Field:
    """L2 projection of a pointwise function on the sphere into P1.

    ``g`` receives an array of unit vectors of shape (..., 3).
    """
    rhs = load_vector(ops.mesh, g, degree)
    c = ops.solve_mass(rhs)
    residual = np.linalg.norm(ops.mass @ c - rhs)
    scale = max(np.linalg.norm(rhs), np.finfo(float).tiny)
    if not np.all(np.isfinite(c)) or residual > rtol * scale:
        raise NumericalError(
            f"mass solve failed: residual {residual:.3e} (relative {residual / scale:.3e})",
            residual=residual,
        )
    return Field(c, ops.mesh)


def interpolate(g: Callable[[np.ndarray], np.ndarray], mesh: SphereMesh) -> Field:
    """Nodal interpolant of ``g``."""
    values = np.asarray(g(mesh.vertices), dtype=float)
    return Field(np.broadcast_to(values, (mesh.n_vertices,)).copy(), mesh)

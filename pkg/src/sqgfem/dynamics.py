"""Stochastic QG dynamics: PV inversion, noise basis and the midpoint stepper.

The fully discrete scheme advances ``(Q^{n+1}, psi^{n+1/2})`` by solving

    M (Q1 - Q0) - v(q_mid, chi) = 0
    (F M + K) psi - M (f + h - q_mid) = 0

with ``q_mid = (Q0 + Q1) / 2`` and ``chi = dt psi + sum_i dW_i xi_i`` by
Newton's method.  Total PV is conserved to round-off and enstrophy to the
Newton tolerance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgumentError, NumericalError
from .fem import Field, Operators, l2_project
from .harmonics import harmonic, harmonic_indices
from .mesh import SphereMesh
from .rng import NoiseStream

logger = logging.getLogger(__name__)

__all__ = [
    "PhysicsConfig",
    "NoiseBasis",
    "SimState",
    "NewtonSettings",
    "HelmholtzSolver",
    "Stepper",
    "coriolis_field",
    "make_physics",
    "invert_pv",
    "build_noise_basis",
    "initial_state",
    "step",
    "run",
]

DEFAULT_SIGMA = 0.05
DEFAULT_FROUDE = 1.0


def _as_array(x, n: int, name: str) -> np.ndarray:
    if x is None:
        return np.zeros(n)
    a = np.asarray(x, dtype=float)
    if a.shape == ():
        return np.full(n, float(a))
    if a.shape != (n,):
        raise InvalidArgumentError(f"{name} has shape {a.shape}, expected ({n},)")
    return a


@dataclass(frozen=True, eq=False)
class PhysicsConfig:
    """Physical parameters of one run.

    ``coriolis`` and ``topography`` are nodal P1 coefficient vectors.  With
    ``froude == 0`` the Helmholtz operator is singular and ``project_mean``
    must be set, which removes the constant mode from right-hand side and
    solution.
    """

    froude: float
    coriolis: np.ndarray
    topography: np.ndarray
    noise_amplitude: float = DEFAULT_SIGMA
    dt: float = 1.0
    project_mean: bool = False

    def __post_init__(self):
        if not self.froude >= 0:
            raise InvalidArgumentError(f"Froude number must be >= 0, got {self.froude}")
        if not self.dt > 0:
            raise InvalidArgumentError(f"dt must be positive, got {self.dt}")
        if not self.noise_amplitude >= 0:
            raise InvalidArgumentError(f"noise amplitude must be >= 0, got {self.noise_amplitude}")
        if self.froude == 0 and not self.project_mean:
            raise InvalidArgumentError("F = 0 requires project_mean=True")
        for name in ("coriolis", "topography"):
            a = np.asarray(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def background(self) -> np.ndarray:
        """``f + h``, the PV of a state at rest."""
        return self.coriolis + self.topography


def coriolis_field(ops: Operators, omega: float = 1.0) -> Field:
    """L2 projection of ``2 omega sin(latitude)``."""
    return l2_project(lambda x: 2.0 * omega * x[..., 2], ops)


def make_physics(
    ops: Operators,
    froude: float = DEFAULT_FROUDE,
    sigma: float = DEFAULT_SIGMA,
    dt: float = 1.0,
    omega: float = 1.0,
    topography=None,
    project_mean: bool | None = None,
) -> PhysicsConfig:
    """Build a :class:`PhysicsConfig` with ``f = 2 omega sin(lat)``."""
    f = coriolis_field(ops, omega).coefficients if omega != 0 else np.zeros(ops.n)
    h = _as_array(topography, ops.n, "topography")
    if project_mean is None:
        project_mean = froude == 0
    return PhysicsConfig(
        froude=float(froude),
        coriolis=f,
        topography=h,
        noise_amplitude=float(sigma),
        dt=float(dt),
        project_mean=project_mean,
    )


class HelmholtzSolver:
    """Solves ``(F M + K) psi = r`` with a cached factorisation.

    ``method="direct"`` uses a sparse LU; ``method="cg"`` uses conjugate
    gradients with relative tolerance ``cg_rtol``.  For ``F = 0`` the
    constant mode is projected out of ``r`` and the mean-zero solution is
    returned.
    """

    def __init__(self, ops: Operators, froude: float, project_mean: bool = False,
                 method: str = "direct", cg_rtol: float = 1e-14):
        if froude == 0 and not project_mean:
            raise NumericalError("Helmholtz operator is singular for F = 0 without mean projection")
        if method not in ("direct", "cg"):
            raise InvalidArgumentError(f"unknown linear solver {method!r}")
        self.ops = ops
        self.froude = float(froude)
        self.project_mean = bool(project_mean)
        self.method = method
        self.cg_rtol = cg_rtol
        self.matrix = (self.froude * ops.mass + ops.stiffness).tocsr()
        self._lu = None

    @property
    def singular(self) -> bool:
        return self.froude == 0

    def _factor(self):
        if self._lu is None:
            if self.singular:
                b = self.ops.area_vector[:, None]
                bordered = sp.bmat([[self.matrix, b], [b.T, None]], format="csc")
                self._lu = spla.splu(bordered)
            else:
                self._lu = spla.splu(self.matrix.tocsc())
        return self._lu

    def _project(self, r: np.ndarray) -> np.ndarray:
        b = self.ops.area_vector
        return r - b * (r.sum() / b.sum())

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        r = np.asarray(rhs, dtype=float)
        if self.singular:
            r = self._project(r)
        scale = np.linalg.norm(r)
        if scale == 0.0:
            return np.zeros_like(r)
        if self.method == "direct":
            if self.singular:
                psi = self._factor().solve(np.append(r, 0.0))[:-1]
            else:
                psi = self._factor().solve(r)
            iterations = 1
        else:
            psi, iterations = self._cg(r)
        if self.singular:
            b = self.ops.area_vector
            psi = psi - b @ psi / b.sum()
        residual = np.linalg.norm(self.matrix @ psi - r)
        if not np.isfinite(residual) or residual > 1e-12 * scale:
            raise NumericalError(
                f"Helmholtz solve did not converge: relative residual {residual / scale:.3e}",
                residual=residual,
                iterations=iterations,
            )
        return psi

    def _cg(self, r):
        diag = self.matrix.diagonal()
        precond = spla.LinearOperator(self.matrix.shape, matvec=lambda x: x / diag)
        count = [0]

        def callback(_):
            count[0] += 1

        psi, info = spla.cg(
            self.matrix, r, rtol=self.cg_rtol, atol=0.0, maxiter=10 * len(r),
            M=precond, callback=callback,
        )
        if info != 0:
            res = np.linalg.norm(self.matrix @ psi - r)
            raise NumericalError(
                f"CG did not converge after {count[0]} iterations, residual {res:.3e}",
                residual=res,
                iterations=count[0],
            )
        return psi, count[0]


def invert_pv(q, cfg: PhysicsConfig, ops: Operators, method: str = "direct",
              solver: HelmholtzSolver | None = None) -> Field:
    """Stream function for PV ``q``: solves ``(F M + K) psi = M (f + h - q)``."""
    if solver is None:
        solver = HelmholtzSolver(ops, cfg.froude, cfg.project_mean, method=method)
    rhs = ops.load(cfg.background - np.asarray(q, dtype=float))
    return Field(solver.solve(rhs), ops.mesh)


@dataclass(frozen=True, eq=False)
class NoiseBasis:
    """Stream functions ``xi_i`` (rows, amplitude already applied)."""

    stream_functions: np.ndarray
    amplitude: float
    indices: tuple[tuple[int, int], ...]

    @property
    def count(self) -> int:
        return len(self.stream_functions)

    def combine(self, dW: np.ndarray) -> np.ndarray:
        return dW @ self.stream_functions

    def fields(self, mesh: SphereMesh) -> list[Field]:
        return [Field(xi, mesh) for xi in self.stream_functions]


def build_noise_basis(mesh: SphereMesh, ops: Operators, sigma: float, count: int = 9) -> NoiseBasis:
    """Project the first ``count`` real harmonics with ``l >= 1`` and scale by ``sigma``.

    Ordering is (1,-1), (1,0), (1,1), (2,-2), ..., so nine functions cover
    l = 1, 2 and the first l = 3 harmonic.
    """
    if count < 1:
        raise InvalidArgumentError(f"noise basis needs at least one function, got {count}")
    if sigma < 0:
        raise InvalidArgumentError(f"noise amplitude must be >= 0, got {sigma}")
    if mesh is not ops.mesh:
        raise InvalidArgumentError("mesh and operators do not match")
    indices = harmonic_indices(count)
    xis = np.empty((count, ops.n))
    for k, (l, m) in enumerate(indices):
        xi = l2_project(harmonic(l, m), ops).coefficients
        # harmonics with l >= 1 have zero mean; remove quadrature round-off
        xi = xi - ops.pi(xi) / ops.total_area
        xis[k] = sigma * xi
    xis.setflags(write=False)
    return NoiseBasis(xis, float(sigma), tuple(indices))


@dataclass(frozen=True, eq=False)
class SimState:
    """Simulation state: PV, step counter, noise stream and last ``psi``.

    ``psi`` is the most recent stream function (the initial inversion or
    the last midpoint value) and seeds the next Newton solve.
    """

    q: np.ndarray
    step_index: int
    noise: NoiseStream
    psi: np.ndarray | None = None

    @property
    def rng_state(self) -> tuple[int, int, int]:
        return (self.noise.seed, self.noise.member, self.step_index)


@dataclass(frozen=True)
class NewtonSettings:
    """Newton controls: the exact Jacobian is refactorised at every iteration."""

    tol: float = 1e-12
    max_iter: int = 50

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidArgumentError(f"Newton tolerance must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise InvalidArgumentError("max_iter must be >= 1")


def initial_state(q0, cfg: PhysicsConfig, ops: Operators, seed: int, member: int = 0) -> SimState:
    q0 = np.array(q0, dtype=float)
    psi = invert_pv(q0, cfg, ops).coefficients
    return SimState(q=q0, step_index=0, noise=NoiseStream(seed, member), psi=psi)


class Stepper:
    """Implicit midpoint stepper bound to one configuration.

    Holds the operator blocks, the Jacobian layout and the Helmholtz
    factorisation, none of which change between steps.  Not thread-safe;
    use one instance per execution context.
    """

    def __init__(self, cfg: PhysicsConfig, ops: Operators, basis: NoiseBasis,
                 newton: NewtonSettings | None = None):
        if basis.stream_functions.shape[1] != ops.n:
            raise InvalidArgumentError("noise basis does not match the operators")
        self.cfg = cfg
        self.ops = ops
        self.basis = basis
        self.newton = newton or NewtonSettings()
        self.helmholtz = HelmholtzSolver(ops, cfg.froude, cfg.project_mean)
        self.n = ops.n
        self.bordered = cfg.froude == 0
        self._background_load = ops.load(cfg.background)
        self._build_pattern()
        self.last_iterations = 0
        self.last_residual = 0.0

    # -- residual and Jacobian ---------------------------------------------

    def _split(self, x):
        n = self.n
        return x[:n], x[n:2 * n], (x[2 * n] if self.bordered else 0.0)

    def residual(self, x, q0, noise_chi):
        ops, cfg = self.ops, self.cfg
        q1, psi, lam = self._split(x)
        qm = 0.5 * (q0 + q1)
        chi = cfg.dt * psi + noise_chi
        r_q = ops.mass @ (q1 - q0) - ops.advection(qm, chi)
        r_psi = self.helmholtz.matrix @ psi - self._background_load + ops.mass @ qm
        parts = [r_q, r_psi]
        if self.bordered:
            r_psi += lam * ops.area_vector
            parts.append([ops.area_vector @ psi])
        return np.concatenate(parts)

    def _build_pattern(self):
        # every block shares the P1 sparsity pattern, so the Jacobian is
        # rebuilt by gathering block data vectors into a fixed CSC layout
        ops = self.ops
        sc = ops.scatter
        nnz = len(sc.indices)
        rows = np.repeat(np.arange(self.n), np.diff(sc.indptr))
        self._mass_data = np.asarray(ops.mass[rows, sc.indices]).ravel()
        helm_data = np.asarray(self.helmholtz.matrix[rows, sc.indices]).ravel()

        def marker(k):
            data = k * nnz + np.arange(1, nnz + 1, dtype=float)
            return sp.csr_matrix((data, sc.indices, sc.indptr), shape=(self.n, self.n))

        blocks = [[marker(0), marker(1)], [marker(2), marker(3)]]
        if self.bordered:
            ids = np.arange(4 * nnz + 1, 4 * nnz + self.n + 1, dtype=float)[:, None]
            blocks[0].append(None)
            blocks[1].append(sp.csr_matrix(ids))
            blocks.append([None, sp.csr_matrix(ids.T), None])
        template = sp.bmat(blocks, format="csc")
        # fill-reducing ordering, computed once from the block structure
        probe = template.copy()
        probe.data = np.random.default_rng(0).uniform(0.0, 1.0, probe.nnz)
        probe = (probe + sp.identity(probe.shape[0]) * probe.shape[0]).tocsc()
        order = spla.splu(probe, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.1,
                          options=dict(SymmetricMode=True)).perm_c
        self._order = np.argsort(order)
        template = template[self._order][:, self._order].tocsc()
        self._gather = template.data.astype(np.int64) - 1
        self._jac_indices = template.indices
        self._jac_indptr = template.indptr
        self._jac_shape = template.shape
        self._const_data = [0.5 * self._mass_data, helm_data]

    def jacobian(self, x, q0, noise_chi) -> sp.csc_matrix:
        """Exact Jacobian of :meth:`residual` with respect to ``(Q1, psi[, lam])``.

        Rows and columns are in the solver's fill-reducing order.
        """
        ops, cfg = self.ops, self.cfg
        q1, psi, _ = self._split(x)
        qm = 0.5 * (q0 + q1)
        chi = cfg.dt * psi + noise_chi
        sc = ops.scatter
        w = ops.cell_velocity_coefficients(chi) * (ops.mesh.areas / 3.0)[:, None]
        a = sc.data(np.repeat(w[:, :, None], 3, axis=2))
        qbar = qm[ops.mesh.triangles].mean(axis=1)
        c = sc.data((ops.mesh.areas * qbar)[:, None, None] * ops.perp)
        parts = [self._mass_data - 0.5 * a, -cfg.dt * c] + self._const_data
        if self.bordered:
            parts.append(ops.area_vector)
        data = np.concatenate(parts)[self._gather]
        # SuperLU may reorder index arrays in place, so never hand it the template
        return sp.csc_matrix((data, self._jac_indices.copy(), self._jac_indptr.copy()), shape=self._jac_shape)

    def jacobian_matrix(self, x, q0, noise_chi) -> sp.csc_matrix:
        """The Jacobian in the natural (unpermuted) unknown ordering."""
        jac = self.jacobian(x, q0, noise_chi)
        inv = np.argsort(self._order)
        return jac[inv][:, inv].tocsc()

    @staticmethod
    def _factor(jac):
        return spla.splu(jac, permc_spec="NATURAL", diag_pivot_thresh=0.1, relax=1,
                         panel_size=4, options=dict(SymmetricMode=True))

    # -- the step ----------------------------------------------------------

    def solve(self, q0: np.ndarray, psi0: np.ndarray, noise_chi: np.ndarray, step_index: int = 0):
        """Newton solve for ``(Q^{n+1}, psi^{n+1/2})`` given the noise stream function."""
        settings = self.newton
        x = np.concatenate([q0, psi0] + ([[0.0]] if self.bordered else []))
        tol = settings.tol * (1.0 + np.linalg.norm(q0))
        res = self.residual(x, q0, noise_chi)
        norm = np.linalg.norm(res)
        it = 0
        while norm > tol:
            if it >= settings.max_iter:
                raise NumericalError(
                    f"Newton did not converge in {it} iterations at step {step_index}: "
                    f"residual {norm:.3e} > {tol:.3e}",
                    residual=norm,
                    iterations=it,
                )
            lu = self._factor(self.jacobian(x, q0, noise_chi))
            dx = np.empty_like(res)
            dx[self._order] = lu.solve(-res[self._order])
            if not np.all(np.isfinite(dx)):
                raise NumericalError("linear solve produced non-finite values", residual=norm, iterations=it)
            x = x + dx
            res = self.residual(x, q0, noise_chi)
            norm = np.linalg.norm(res)
            it += 1
        self.last_iterations = it
        self.last_residual = norm
        q1, psi, _ = self._split(x)
        return q1.copy(), psi.copy()

    def step(self, state: SimState) -> SimState:
        cfg = self.cfg
        q0 = np.asarray(state.q, dtype=float)
        dW = state.noise.increments(state.step_index, self.basis.count, cfg.dt)
        noise_chi = self.basis.combine(dW)
        psi0 = state.psi
        if psi0 is None:
            psi0 = self.helmholtz.solve(self.ops.load(cfg.background - q0))
        q1, psi = self.solve(q0, psi0, noise_chi, state.step_index)
        return SimState(q=q1, step_index=state.step_index + 1, noise=state.noise, psi=psi)


def step(state: SimState, cfg: PhysicsConfig, ops: Operators, basis: NoiseBasis,
         newton: NewtonSettings | None = None) -> SimState:
    """Advance one implicit-midpoint step; see :class:`Stepper`."""
    return Stepper(cfg, ops, basis, newton).step(state)


def run(
    state: SimState,
    cfg: PhysicsConfig,
    ops: Operators,
    basis: NoiseBasis,
    steps: int,
    hooks: Iterable[Callable[[SimState], None]] = (),
    newton: NewtonSettings | None = None,
    stepper: Stepper | None = None,
    recorder=None,
):
    """Advance ``steps`` times and return the recorded diagnostics.

    The recorder (a :class:`~sqgfem.diagnostics.SeriesRecorder` unless one is
    given) and every extra hook see the initial state and each new state.
    ``recorder.series.final_state`` holds the last state.
    """
    from .diagnostics import SeriesRecorder

    if steps < 0:
        raise InvalidArgumentError(f"steps must be >= 0, got {steps}")
    stepper = stepper or Stepper(cfg, ops, basis, newton)
    if recorder is None:
        recorder = SeriesRecorder(ops, cfg, helmholtz=stepper.helmholtz)
    hooks = [recorder, *hooks]
    for hook in hooks:
        hook(state)
    for _ in range(steps):
        state = stepper.step(state)
        for hook in hooks:
            hook(state)
    series = recorder.series
    series.final_state = state
    return series

"""Scalar and field statistics of PV trajectories and Gibbs batches."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgumentError, InvalidStateError
from .fem import Field, Operators
from .mesh import SphereMesh
from .quadrature import triangle_rule

__all__ = [
    "casimir",
    "casimirs",
    "energy",
    "DiagnosticSeries",
    "SeriesRecorder",
    "mean_square_field",
    "spatial_variance",
    "mixing_proxy",
    "histogram",
    "energy_bound_constant",
    "rolling_mean",
]

SERIES_COLUMNS = ("step", "Pi", "Z", "E", "C3", "C4", "C3_roll", "C4_roll")


@lru_cache(maxsize=32)
def _evaluation(mesh: SphereMesh, degree: int):
    """Sparse map from nodal values to values at degree-``degree`` quadrature points."""
    bary, w = triangle_rule(degree)
    nc, nq = mesh.n_triangles, len(w)
    rows = np.repeat(np.arange(nc * nq), 3)
    cols = np.repeat(mesh.triangles, nq, axis=0).ravel()
    vals = np.tile(bary, (nc, 1)).ravel()
    interp = sp.csr_matrix((vals, (rows, cols)), shape=(nc * nq, mesh.n_vertices))
    weights = (mesh.areas[:, None] * w[None, :]).ravel()
    return interp, weights


def casimir(q, p: int, mesh: SphereMesh) -> float:
    """``int q^p`` for a P1 field, integrated exactly (quadrature degree ``p``)."""
    if int(p) != p or p < 1:
        raise InvalidArgumentError(f"Casimir order must be a positive integer, got {p!r}")
    interp, weights = _evaluation(mesh, int(p))
    return float(weights @ (interp @ np.asarray(q, dtype=float)) ** p)


def casimirs(rows: np.ndarray, p: int, mesh: SphereMesh, chunk: int = 256) -> np.ndarray:
    """``int q^p`` for every row of ``rows`` (a batch of nodal vectors)."""
    if int(p) != p or p < 1:
        raise InvalidArgumentError(f"Casimir order must be a positive integer, got {p!r}")
    interp, weights = _evaluation(mesh, int(p))
    rows = np.atleast_2d(rows)
    out = np.empty(len(rows))
    for s in range(0, len(rows), chunk):
        vals = interp @ rows[s:s + chunk].T
        out[s:s + chunk] = weights @ vals ** p
    return out


def energy(psi, ops: Operators, froude: float) -> float:
    """``E = 0.5 psi^T (K + F M) psi``."""
    psi = np.asarray(psi, dtype=float)
    return 0.5 * float(psi @ (ops.stiffness @ psi) + froude * (psi @ (ops.mass @ psi)))


def rolling_mean(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return np.cumsum(values) / np.arange(1, len(values) + 1)


@dataclass
class DiagnosticSeries:
    """Per-record invariants plus running nodal sums.

    A record is one time step of a run or one sample of a batch.  Nodal
    sums accumulate ``q``, ``q**2`` (nodal), the load vector of ``q**2`` and
    ``psi`` when available.
    """

    step: list = field(default_factory=list)
    pi: list = field(default_factory=list)
    z: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    c3: list = field(default_factory=list)
    c4: list = field(default_factory=list)
    sum_q: np.ndarray | None = None
    sum_q2: np.ndarray | None = None
    sum_q2_load: np.ndarray | None = None
    sum_psi: np.ndarray | None = None
    count: int = 0
    psi_count: int = 0
    final_state: object = None

    def __len__(self) -> int:
        return len(self.z)

    def array(self, name: str) -> np.ndarray:
        return np.asarray(getattr(self, name), dtype=float)

    def rolling(self, name: str) -> np.ndarray:
        return rolling_mean(getattr(self, name))

    def mean_field(self, which: str = "q") -> np.ndarray:
        if self.count == 0:
            raise InvalidStateError("no records accumulated")
        if which == "q":
            return self.sum_q / self.count
        if which == "q2":
            return self.sum_q2 / self.count
        if which == "psi":
            if self.psi_count == 0:
                raise InvalidStateError("no stream functions accumulated")
            return self.sum_psi / self.psi_count
        raise InvalidArgumentError(f"unknown field {which!r}")

    def rows(self):
        """Rows of the series CSV (see ``SERIES_COLUMNS``)."""
        c3r, c4r = self.rolling("c3"), self.rolling("c4")
        e = self.energy if len(self.energy) == len(self.z) else [np.nan] * len(self.z)
        for k in range(len(self.z)):
            yield (self.step[k], self.pi[k], self.z[k], e[k], self.c3[k], self.c4[k], c3r[k], c4r[k])

    def merge_from(self, other: "DiagnosticSeries") -> None:
        """Add another series' nodal sums (records are not concatenated)."""
        for name in ("sum_q", "sum_q2", "sum_q2_load", "sum_psi"):
            mine, theirs = getattr(self, name), getattr(other, name)
            if theirs is not None:
                setattr(self, name, theirs.copy() if mine is None else mine + theirs)
        self.count += other.count
        self.psi_count += other.psi_count


class SeriesRecorder:
    """Hook that records invariants and accumulates nodal means.

    Use as ``hook(state)`` during a run, or feed batches of nodal vectors
    with :meth:`add_rows`.  ``energy=True`` inverts each state for ``psi``
    (reusing the state's own ``psi`` is wrong: during a run it holds the
    midpoint value).
    """

    def __init__(self, ops: Operators, cfg=None, helmholtz=None, energy: bool = True,
                 accumulate: bool = True, snapshot_every: int = 0, on_snapshot=None):
        self.ops = ops
        self.cfg = cfg
        self.want_energy = energy and cfg is not None
        self.accumulate = accumulate
        self.snapshot_every = snapshot_every
        self.on_snapshot = on_snapshot
        if self.want_energy and helmholtz is None:
            from .dynamics import HelmholtzSolver

            helmholtz = HelmholtzSolver(ops, cfg.froude, cfg.project_mean)
        self.helmholtz = helmholtz
        self.series = DiagnosticSeries()
        self._background_load = None if cfg is None else ops.load(cfg.background)
        interp, weights = _evaluation(ops.mesh, 3)
        self._q2_load = (interp, weights)

    def _psi_rows(self, rows: np.ndarray) -> np.ndarray:
        rhs = self._background_load[:, None] - self.ops.mass @ rows.T
        return np.stack([self.helmholtz.solve(rhs[:, k]) for k in range(rhs.shape[1])])

    def _q2_loads(self, rows: np.ndarray) -> np.ndarray:
        interp, weights = self._q2_load
        vals = interp @ rows.T
        return (interp.T @ (weights[:, None] * vals * vals)).T

    def add_rows(self, rows: np.ndarray, steps: Sequence[int] | None = None, with_psi: bool | None = None):
        """Record a block of states given as rows of nodal PV coefficients."""
        ops, s = self.ops, self.series
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        b = len(rows)
        start = len(s.z)
        s.step.extend(range(start, start + b) if steps is None else steps)
        s.pi.extend((rows @ ops.area_vector).tolist())
        s.z.extend((0.5 * np.einsum("ij,ij->i", rows, (ops.mass @ rows.T).T)).tolist())
        s.c3.extend(casimirs(rows, 3, ops.mesh).tolist())
        s.c4.extend(casimirs(rows, 4, ops.mesh).tolist())
        with_psi = self.want_energy if with_psi is None else with_psi
        psi = None
        if with_psi:
            psi = self._psi_rows(rows)
            h = self.helmholtz.matrix
            s.energy.extend((0.5 * np.einsum("ij,ij->i", psi, (h @ psi.T).T)).tolist())
        if self.accumulate:
            n = ops.n
            if s.sum_q is None:
                s.sum_q, s.sum_q2, s.sum_q2_load = np.zeros(n), np.zeros(n), np.zeros(n)
            s.sum_q += rows.sum(axis=0)
            s.sum_q2 += (rows * rows).sum(axis=0)
            s.sum_q2_load += self._q2_loads(rows).sum(axis=0)
            s.count += b
            if psi is not None:
                s.sum_psi = psi.sum(axis=0) if s.sum_psi is None else s.sum_psi + psi.sum(axis=0)
                s.psi_count += b
        return psi

    def __call__(self, state) -> None:
        self.add_rows(np.asarray(state.q)[None, :], steps=[state.step_index])
        if self.snapshot_every and self.on_snapshot and state.step_index % self.snapshot_every == 0:
            self.on_snapshot(state)


def mean_square_field(series: DiagnosticSeries, ops: Operators | None = None,
                      mode: str = "nodal") -> np.ndarray:
    """Time (or sample) mean of ``q**2``.

    ``mode="nodal"`` averages squared nodal coefficients; ``"projected"``
    returns the L2 projection into P1 of the averaged piecewise-quadratic
    ``q**2`` (needs ``ops``).
    """
    if series.count == 0:
        raise InvalidStateError("mean square field of an empty accumulator")
    if mode == "nodal":
        return series.sum_q2 / series.count
    if mode == "projected":
        if ops is None:
            raise InvalidArgumentError("projected mode needs the operators")
        return ops.solve_mass(series.sum_q2_load / series.count)
    raise InvalidArgumentError(f"unknown mode {mode!r}")


def spatial_variance(s, ops: Operators) -> float:
    """``int (s - mean(s))^2`` with ``mean(s) = int s / A``."""
    s = np.asarray(s, dtype=float)
    d = s - ops.pi(s) / ops.total_area
    return float(d @ (ops.mass @ d))


def mixing_proxy(final_c4: Sequence[float], initial_c4: float) -> float:
    """``|<C4(q^T)>_ensemble - C4(q^0)|``."""
    final_c4 = np.asarray(final_c4, dtype=float)
    if final_c4.size == 0:
        raise InvalidArgumentError("mixing proxy of an empty ensemble")
    # members are summed in index order so the result is order-reproducible
    return float(abs(final_c4.sum() / final_c4.size - initial_c4))


def histogram(values, bins: int = 50):
    """Uniform histogram over ``[min, max]`` and the sample standard deviation.

    Returns ``(edges, counts, std)``.  All-equal input gives a single bin.
    """
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise InvalidArgumentError("histogram needs at least two values")
    lo, hi = values.min(), values.max()
    if lo == hi:
        return np.array([lo, hi]), np.array([values.size]), 0.0
    counts, edges = np.histogram(values, bins=bins, range=(lo, hi))
    return edges, counts, float(values.std(ddof=1))


def smallest_pencil_eigenvalue(ops: Operators, froude: float) -> float:
    """Smallest (nonzero, for ``F = 0``) eigenvalue of ``(K + F M) x = lam M x``."""
    h = (ops.stiffness + froude * ops.mass)
    if ops.n <= 3000:
        lam = sla.eigh(h.toarray(), ops.mass.toarray(), eigvals_only=True, subset_by_index=[0, 1])
    else:
        lam = np.sort(spla.eigsh(h.tocsc(), k=2, M=ops.mass.tocsc(), sigma=-1.0,
                                 return_eigenvectors=False))
    if froude == 0:
        return float(lam[1])
    return float(lam[0])


def energy_bound_constant(ops: Operators, cfg, enstrophy: float) -> float:
    """Constant ``c`` with ``E <= c Z`` along any trajectory of enstrophy ``Z``.

    ``E = 0.5 d^T M (K + F M)^-1 M d`` with ``d = f + h - q``, so
    ``E <= Z(d) / lam_min <= (sqrt Z(f + h) + sqrt Z)^2 / lam_min``.
    """
    if enstrophy <= 0:
        raise InvalidArgumentError("enstrophy must be positive")
    lam = smallest_pencil_eigenvalue(ops, cfg.froude)
    zb = ops.enstrophy(cfg.background)
    return (np.sqrt(zb / enstrophy) + 1.0) ** 2 / lam

"""Sampling the enstrophy/total-PV Gibbs distribution.

Fluctuations ``Q'`` are drawn from ``G'(Q') ~ exp(-Z(Q'))``, which is the
Gaussian ``N(0, M^-1)``, and mapped to the target mean PV ``P0`` and
enstrophy ``Z0`` by an affine rescaling.  Three samplers are provided:

* ``"independence"``: independence Metropolis-Hastings whose proposal is the
  lumped-mass Gaussian ``N(0, 1/M^L_i)``;
* ``"sitewise"``: Metropolis-within-Gibbs with the same lumped proposal,
  one coordinate at a time (coordinates of one colour class at once);
* ``"exact"``: direct draws through a Cholesky factor of ``M``, used as the
  validation oracle and as a fast path.

The independence sampler's acceptance rate collapses with the number of
unknowns (roughly exp(-c N)), so beyond a few dozen vertices only the
latter two are practical.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import InvalidArgumentError
from .fem import Operators

logger = logging.getLogger(__name__)

__all__ = [
    "GibbsTarget",
    "SampleBatch",
    "propose_lumped",
    "metropolis_chain",
    "iter_chain",
    "exact_gaussian_samples",
    "estimate_zprime",
    "transform_sample",
    "gibbs_sample",
    "iter_gibbs",
    "make_target",
    "fluctuation_blocks",
    "ExactGaussian",
    "SAMPLERS",
]

SAMPLERS = ("independence", "sitewise", "exact")
DEFAULT_BURN_IN = 1000
_MAX_LOG_RATIO = 700.0


def propose_lumped(rng: np.random.Generator, lumped_mass: np.ndarray, size: int | None = None) -> np.ndarray:
    """Draw ``Q'_i ~ N(0, 1/M^L_i)`` independently (``size`` rows if given)."""
    ml = np.asarray(lumped_mass, dtype=float)
    if np.any(ml <= 0):
        raise InvalidArgumentError("lumped mass must be strictly positive")
    shape = ml.shape if size is None else (size,) + ml.shape
    return rng.standard_normal(shape) / np.sqrt(ml)


def _enstrophy_rows(mass, x: np.ndarray) -> np.ndarray:
    return 0.5 * np.einsum("ij,ij->i", x, (mass @ x.T).T)


@dataclass
class SampleBatch:
    """Samples (optional), their ``Pi`` and ``Z`` values and acceptance counts."""

    pi: np.ndarray
    z: np.ndarray
    accepted: int
    proposed: int
    samples: np.ndarray | None = None
    method: str = "independence"

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else 1.0

    def __len__(self) -> int:
        return len(self.z)


@dataclass(frozen=True, eq=False)
class GibbsTarget:
    """Target totals ``P0``, ``Z0`` and the fluctuation enstrophy estimate ``Z'``."""

    ops: Operators
    p0: float
    z0: float
    zprime: float
    zprime_samples: int = 0

    def __post_init__(self):
        if not self.zprime > 0:
            raise InvalidArgumentError(f"Z' must be positive, got {self.zprime}")
        if not self.z0 > self.p0 ** 2 / (2.0 * self.area):
            raise InvalidArgumentError(
                f"Z0 = {self.z0} must exceed P0^2 / (2A) = {self.p0 ** 2 / (2.0 * self.area)}"
            )

    @property
    def area(self) -> float:
        return self.ops.total_area

    @property
    def mean_value(self) -> float:
        return self.p0 / self.area

    @property
    def scale(self) -> float:
        radicand = self.z0 / self.zprime - self.p0 ** 2 / (2.0 * self.area * self.zprime)
        if radicand < 0:
            raise InvalidArgumentError(f"negative radicand {radicand} in sample transformation")
        return float(np.sqrt(radicand))


def transform_sample(q_prime: np.ndarray, target: GibbsTarget) -> np.ndarray:
    """``Q_i = P0/A + Q'_i sqrt(Z0/Z' - P0^2/(2 A Z'))``; works row-wise on 2-D input."""
    return target.mean_value + np.asarray(q_prime, dtype=float) * target.scale


class _Colouring:
    """Greedy colouring of the P1 adjacency graph (largest degree first)."""

    def __init__(self, mass):
        csr = mass.tocsr()
        n = csr.shape[0]
        colour = -np.ones(n, dtype=np.int64)
        degree = np.diff(csr.indptr)
        for i in np.argsort(-degree, kind="stable"):
            used = set(colour[csr.indices[csr.indptr[i]:csr.indptr[i + 1]]].tolist())
            c = 0
            while c in used:
                c += 1
            colour[i] = c
        self.classes = [np.flatnonzero(colour == c) for c in range(colour.max() + 1)]
        diag = csr.diagonal()
        offdiag = (csr - sp.diags(diag)).tocsr()
        offdiag.eliminate_zeros()
        self.rows = [offdiag[idx] for idx in self.classes]
        self.diag = diag


def iter_chain(
    n: int,
    ops: Operators,
    rng: np.random.Generator,
    burn_in: int = DEFAULT_BURN_IN,
    proposal: str = "independence",
    block: int = 2048,
    initial: np.ndarray | None = None,
    counts: dict | None = None,
) -> Iterator[np.ndarray]:
    """Yield the ``n`` post-burn-in chain states in blocks of rows.

    Rejected proposals repeat the current state, as usual for MCMC.
    ``counts`` (if given) receives ``accepted`` and ``proposed`` totals.
    """
    if n < 1:
        raise InvalidArgumentError(f"chain length must be >= 1, got {n}")
    if burn_in < 0:
        raise InvalidArgumentError("burn-in must be >= 0")
    if proposal not in ("independence", "sitewise"):
        raise InvalidArgumentError(f"unknown proposal {proposal!r}")
    counts = counts if counts is not None else {}
    counts.setdefault("accepted", 0)
    counts.setdefault("proposed", 0)
    ml = ops.lumped_mass
    current = propose_lumped(rng, ml) if initial is None else np.array(initial, dtype=float)
    if proposal == "independence":
        yield from _independence_blocks(n, ops, rng, burn_in, block, current, counts)
    else:
        yield from _sitewise_blocks(n, ops, rng, burn_in, block, current, counts)


def _independence_blocks(n, ops, rng, burn_in, block, current, counts):
    ml = ops.lumped_mass
    # log target/proposal weight of a state: -(Z - Z_L)
    log_w = -(ops.enstrophy(current) - ops.lumped_enstrophy(current))
    total = n + burn_in
    done = 0
    while done < total:
        b = min(block, total - done)
        props = propose_lumped(rng, ml, size=b)
        z = _enstrophy_rows(ops.mass, props)
        zl = 0.5 * (props * props) @ ml
        log_u = np.log(rng.random(b))
        out = np.empty_like(props)
        accepted = 0
        for k in range(b):
            lw = zl[k] - z[k]
            if log_u[k] < min(lw - log_w, _MAX_LOG_RATIO):
                current = props[k]
                log_w = lw
                accepted += 1
            out[k] = current
        counts["accepted"] += accepted
        counts["proposed"] += b
        skip = max(0, burn_in - done)
        done += b
        if skip < b:
            yield out[skip:]


def _sitewise_blocks(n, ops, rng, burn_in, block, current, counts):
    ml = ops.lumped_mass
    col = _Colouring(ops.mass)
    q = current.copy()
    total = n + burn_in
    done = 0
    while done < total:
        b = min(block, total - done)
        out = np.empty((b, len(q)))
        accepted = 0
        for k in range(b):
            for idx, rows in zip(col.classes, col.rows):
                old = q[idx]
                new = rng.standard_normal(len(idx)) / np.sqrt(ml[idx])
                coupling = rows @ q
                d = col.diag[idx]
                dz = 0.5 * d * (new * new - old * old) + (new - old) * coupling
                dzl = 0.5 * ml[idx] * (new * new - old * old)
                log_ratio = np.minimum(dzl - dz, _MAX_LOG_RATIO)
                accept = np.log(rng.random(len(idx))) < log_ratio
                q[idx] = np.where(accept, new, old)
                accepted += int(accept.sum())
            out[k] = q
        counts["accepted"] += accepted
        counts["proposed"] += b * len(q)
        skip = max(0, burn_in - done)
        done += b
        if skip < b:
            yield out[skip:]


def metropolis_chain(
    n: int,
    ops: Operators,
    rng: np.random.Generator,
    burn_in: int = DEFAULT_BURN_IN,
    proposal: str = "independence",
    keep_samples: bool = True,
) -> SampleBatch:
    """Chain of ``n`` states targeting ``exp(-Z(Q'))`` after ``burn_in`` discarded steps.

    The acceptance rate is logged; for the independence proposal it is the
    first thing to check.
    """
    counts: dict = {}
    pis, zs, rows = [], [], []
    for blk in iter_chain(n, ops, rng, burn_in, proposal, counts=counts):
        pis.append(blk @ ops.area_vector)
        zs.append(_enstrophy_rows(ops.mass, blk))
        if keep_samples:
            rows.append(blk)
    batch = SampleBatch(
        pi=np.concatenate(pis),
        z=np.concatenate(zs),
        accepted=counts["accepted"],
        proposed=counts["proposed"],
        samples=np.concatenate(rows) if keep_samples else None,
        method=proposal,
    )
    logger.info("%s chain: %d samples, acceptance %.3g", proposal, n, batch.acceptance_rate)
    return batch


class ExactGaussian:
    """Draws from ``N(0, M^-1)`` using a dense Cholesky factor ``M = L L^T``."""

    def __init__(self, ops: Operators):
        self.ops = ops
        self.factor = sla.cholesky(ops.mass.toarray(), lower=True)

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        z = rng.standard_normal((self.ops.n, size))
        # x = L^-T z has covariance L^-T L^-1 = M^-1
        return sla.solve_triangular(self.factor, z, lower=True, trans="T").T


def exact_gaussian_samples(
    n: int, ops: Operators, rng: np.random.Generator, block: int = 2048
) -> Iterator[np.ndarray]:
    """Yield ``n`` independent ``N(0, M^-1)`` draws in blocks of rows."""
    sampler = ExactGaussian(ops)
    done = 0
    while done < n:
        b = min(block, n - done)
        yield sampler.draw(rng, b)
        done += b


def fluctuation_blocks(
    n: int,
    ops: Operators,
    rng: np.random.Generator,
    method: str = "independence",
    burn_in: int = DEFAULT_BURN_IN,
    counts: dict | None = None,
) -> Iterator[np.ndarray]:
    """``n`` samples of ``G'`` from the chosen sampler, in blocks."""
    if method not in SAMPLERS:
        raise InvalidArgumentError(f"unknown sampler {method!r}; choose from {SAMPLERS}")
    if method == "exact":
        if counts is not None:
            counts["accepted"] = counts.get("accepted", 0) + n
            counts["proposed"] = counts.get("proposed", 0) + n
        return exact_gaussian_samples(n, ops, rng)
    return iter_chain(n, ops, rng, burn_in, method, counts=counts)


def estimate_zprime(
    n: int,
    ops: Operators,
    rng: np.random.Generator,
    method: str = "independence",
    burn_in: int = DEFAULT_BURN_IN,
) -> float:
    """Mean of ``Z(Q')`` over an ``n``-sample run of the chosen sampler."""
    if n < 100:
        raise InvalidArgumentError(f"need at least 100 samples to estimate Z', got {n}")
    total = 0.0
    for blk in fluctuation_blocks(n, ops, rng, method, burn_in):
        total += _enstrophy_rows(ops.mass, blk).sum()
    return total / n


def make_target(
    p0: float,
    z0: float,
    ops: Operators,
    rng: np.random.Generator,
    n_zprime: int = 10_000,
    method: str = "independence",
    burn_in: int = DEFAULT_BURN_IN,
) -> GibbsTarget:
    """Stage one of the sampling procedure: estimate ``Z'`` and build the target."""
    zprime = estimate_zprime(n_zprime, ops, rng, method, burn_in)
    return GibbsTarget(ops, float(p0), float(z0), zprime, n_zprime)


def iter_gibbs(
    n: int,
    target: GibbsTarget,
    rng: np.random.Generator,
    method: str = "independence",
    burn_in: int = DEFAULT_BURN_IN,
    counts: dict | None = None,
) -> Iterator[np.ndarray]:
    """Stage two: yield blocks of transformed samples ``Q``."""
    for blk in fluctuation_blocks(n, target.ops, rng, method, burn_in, counts):
        yield transform_sample(blk, target)


def gibbs_sample(
    n: int,
    target: GibbsTarget,
    rng: np.random.Generator,
    method: str = "independence",
    burn_in: int = DEFAULT_BURN_IN,
    keep_samples: bool = False,
) -> SampleBatch:
    """``n`` transformed Gibbs samples with per-sample ``Pi`` and ``Z``."""
    ops = target.ops
    counts: dict = {}
    pis, zs, rows = [], [], []
    for blk in iter_gibbs(n, target, rng, method, burn_in, counts):
        pis.append(blk @ ops.area_vector)
        zs.append(_enstrophy_rows(ops.mass, blk))
        if keep_samples:
            rows.append(blk)
    return SampleBatch(
        pi=np.concatenate(pis),
        z=np.concatenate(zs),
        accepted=counts.get("accepted", 0),
        proposed=counts.get("proposed", 0),
        samples=np.concatenate(rows) if keep_samples else None,
        method=method,
    )

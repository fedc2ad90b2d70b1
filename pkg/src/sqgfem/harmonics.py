"""Real, L2-normalised spherical harmonics on the unit sphere."""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np
from scipy.special import sph_harm_y


def harmonic_indices(count: int, include_constant: bool = False) -> list[tuple[int, int]]:
    """The first ``count`` (l, m) pairs ordered by l, then m from -l to l."""
    out = []
    l = 0 if include_constant else 1
    while len(out) < count:
        for m in range(-l, l + 1):
            if len(out) == count:
                break
            out.append((l, m))
        l += 1
    return out


def real_sph_harm(l: int, m: int, xyz: np.ndarray) -> np.ndarray:
    """Evaluate the real harmonic ``Y_lm`` at unit vectors ``xyz`` (..., 3).

    Uses the convention ``sqrt(2) (-1)^m Re/Im Y_l^|m|`` so that the set is
    orthonormal on the sphere; ``m < 0`` takes the imaginary part.
    """
    if abs(m) > l:
        raise ValueError(f"|m| must not exceed l, got l={l}, m={m}")
    xyz = np.asarray(xyz, dtype=float)
    colat = np.arccos(np.clip(xyz[..., 2], -1.0, 1.0))
    lon = np.arctan2(xyz[..., 1], xyz[..., 0])
    y = sph_harm_y(l, abs(m), colat, lon)
    if m == 0:
        return y.real
    sign = -1.0 if abs(m) % 2 else 1.0
    if m > 0:
        return np.sqrt(2.0) * sign * y.real
    return np.sqrt(2.0) * sign * y.imag


def harmonic(l: int, m: int) -> Callable[[np.ndarray], np.ndarray]:
    return lambda xyz: real_sph_harm(l, m, xyz)


def iter_harmonics(count: int) -> Iterator[tuple[int, int, Callable]]:
    for l, m in harmonic_indices(count):
        yield l, m, harmonic(l, m)

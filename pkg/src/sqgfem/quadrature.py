"""Quadrature rules on the reference triangle."""

from __future__ import annotations

from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def triangle_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Collapsed Gauss rule exact for polynomials of total degree ``degree``.

    Returns barycentric coordinates, shape (n, 3), and weights summing to 1
    (multiply by the cell area to integrate).
    """
    if degree < 0:
        raise ValueError("degree must be non-negative")
    n = (degree + 3) // 2
    x, w = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (x + 1.0)
    ws = 0.5 * w
    # Duffy map (s, t) -> (s, (1 - s) t); the Jacobian (1 - s) raises the
    # degree in s to degree + 1, which n Gauss points integrate if 2n - 1 >= degree + 1
    ss, tt = np.meshgrid(s, s, indexing="ij")
    wss, wtt = np.meshgrid(ws, ws, indexing="ij")
    l1 = ss.ravel()
    l2 = ((1.0 - ss) * tt).ravel()
    weights = (2.0 * (1.0 - ss) * wss * wtt).ravel()
    bary = np.stack([1.0 - l1 - l2, l1, l2], axis=1)
    bary.setflags(write=False)
    weights.setflags(write=False)
    return bary, weights

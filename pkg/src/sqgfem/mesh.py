"""Icosahedral triangulations of the unit sphere.

Meshes are built from a fixed golden-ratio icosahedron and refined by
splitting every triangle into four through its edge midpoints, which are
pushed back onto the sphere.  Vertex ordering is deterministic, so two
calls with the same refinement level give bit-identical arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "MAX_REFINEMENT",
    "SphereMesh",
    "CellGeometry",
    "build_icosphere",
    "cell_geometry",
    "latitude_longitude",
]

MAX_REFINEMENT = 7

_PHI = (1.0 + np.sqrt(5.0)) / 2.0

_ICOSAHEDRON_VERTICES = np.array(
    [
        (-1.0, _PHI, 0.0),
        (1.0, _PHI, 0.0),
        (-1.0, -_PHI, 0.0),
        (1.0, -_PHI, 0.0),
        (0.0, -1.0, _PHI),
        (0.0, 1.0, _PHI),
        (0.0, -1.0, -_PHI),
        (0.0, 1.0, -_PHI),
        (_PHI, 0.0, -1.0),
        (_PHI, 0.0, 1.0),
        (-_PHI, 0.0, -1.0),
        (-_PHI, 0.0, 1.0),
    ]
)

_ICOSAHEDRON_FACES = np.array(
    [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ],
    dtype=np.int64,
)


@dataclass(frozen=True)
class CellGeometry:
    """Geometry of one flat triangle: area, P1 gradients and unit normal."""

    area: float
    basis_gradients: np.ndarray  # (3, 3), row k is grad phi_k
    unit_normal: np.ndarray


@dataclass(frozen=True, eq=False)
class SphereMesh:
    """Closed, outward-oriented triangulation of the unit sphere.

    The per-cell arrays (``areas``, ``normals``, ``gradients``) are computed
    lazily and cached; all arrays are flagged read-only.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    refinement_level: int
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.vertices.setflags(write=False)
        self.triangles.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def _geometry(self):
        p = self.vertices[self.triangles]  # (nc, 3, 3)
        cross = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        twice_area = np.linalg.norm(cross, axis=1)
        normals = cross / twice_area[:, None]
        # grad phi_k = n x (edge opposite k, walked counter-clockwise) / (2 A)
        opposite = np.stack(
            [p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1
        )
        grads = np.cross(normals[:, None, :], opposite) / twice_area[:, None, None]
        areas = 0.5 * twice_area
        for arr in (areas, normals, grads):
            arr.setflags(write=False)
        return areas, normals, grads

    @property
    def areas(self) -> np.ndarray:
        return self._geometry[0]

    @property
    def normals(self) -> np.ndarray:
        return self._geometry[1]

    @property
    def gradients(self) -> np.ndarray:
        """Array of shape (n_triangles, 3, 3): P1 basis gradients per cell."""
        return self._geometry[2]

    @property
    def total_area(self) -> float:
        return float(np.sum(self.areas))

    @cached_property
    def mean_edge_length(self) -> float:
        p = self.vertices[self.triangles]
        lengths = np.linalg.norm(p - np.roll(p, 1, axis=1), axis=2)
        return float(lengths.mean())

    @cached_property
    def latlon(self) -> tuple[np.ndarray, np.ndarray]:
        """Latitude and longitude of every vertex."""
        lat, lon = _latlon(self.vertices)
        lat.setflags(write=False)
        lon.setflags(write=False)
        return lat, lon

    def edges(self) -> np.ndarray:
        """Directed edges, one row per (triangle, local edge)."""
        t = self.triangles
        return np.stack(
            [t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=1
        ).reshape(-1, 2)


def _subdivide(vertices: np.ndarray, triangles: np.ndarray):
    edges = np.concatenate(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]
    )
    key = np.sort(edges, axis=1)
    unique, inverse = np.unique(key, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    mid = vertices[unique[:, 0]] + vertices[unique[:, 1]]
    mid /= np.linalg.norm(mid, axis=1)[:, None]
    new_vertices = np.concatenate([vertices, mid])

    nt = len(triangles)
    m01 = len(vertices) + inverse[:nt]
    m12 = len(vertices) + inverse[nt : 2 * nt]
    m20 = len(vertices) + inverse[2 * nt :]
    a, b, c = triangles.T
    new_triangles = np.stack(
        [
            np.stack([a, m01, m20], axis=1),
            np.stack([m01, b, m12], axis=1),
            np.stack([m20, m12, c], axis=1),
            np.stack([m01, m12, m20], axis=1),
        ],
        axis=1,
    ).reshape(-1, 3)
    return new_vertices, new_triangles


def build_icosphere(refinement: int, max_refinement: int = MAX_REFINEMENT) -> SphereMesh:
    """Icosahedral mesh of the unit sphere refined ``refinement`` times.

    Level ``r`` has ``10 * 4**r + 2`` vertices and ``20 * 4**r`` triangles.
    """
    if int(refinement) != refinement or refinement < 0:
        raise InvalidArgumentError(f"refinement must be a non-negative integer, got {refinement!r}")
    if refinement > max_refinement:
        raise InvalidArgumentError(
            f"refinement {refinement} exceeds the configured maximum {max_refinement}"
        )
    vertices = _ICOSAHEDRON_VERTICES / np.linalg.norm(_ICOSAHEDRON_VERTICES, axis=1)[:, None]
    triangles = _ICOSAHEDRON_FACES.copy()

    # the base faces are listed with a consistent winding; make it outward
    p = vertices[triangles]
    outward = np.einsum(
        "ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p.sum(axis=1)
    )
    if np.all(outward < 0):
        triangles = triangles[:, ::-1].copy()
    elif not np.all(outward > 0):
        raise AssertionError("base icosahedron has inconsistent winding")

    for _ in range(int(refinement)):
        vertices, triangles = _subdivide(vertices, triangles)
    # one extra normalisation pass keeps |x| = 1 to the last bit
    vertices = vertices / np.linalg.norm(vertices, axis=1)[:, None]
    return SphereMesh(vertices, triangles, int(refinement))


def cell_geometry(mesh: SphereMesh, cell: int) -> CellGeometry:
    if not 0 <= cell < mesh.n_triangles:
        raise IndexError(f"cell index {cell} out of range for {mesh.n_triangles} triangles")
    return CellGeometry(
        area=float(mesh.areas[cell]),
        basis_gradients=np.array(mesh.gradients[cell]),
        unit_normal=np.array(mesh.normals[cell]),
    )


def triangle_geometry(points: np.ndarray) -> CellGeometry:
    """Geometry of an arbitrary flat triangle given as a (3, 3) point array."""
    points = np.asarray(points, dtype=float)
    cross = np.cross(points[1] - points[0], points[2] - points[0])
    twice_area = np.linalg.norm(cross)
    normal = cross / twice_area
    opposite = np.array(
        [points[2] - points[1], points[0] - points[2], points[1] - points[0]]
    )
    grads = np.cross(normal, opposite) / twice_area
    return CellGeometry(area=0.5 * twice_area, basis_gradients=grads, unit_normal=normal)


def _latlon(xyz: np.ndarray):
    xyz = np.asarray(xyz, dtype=float)
    z = np.clip(xyz[..., 2], -1.0, 1.0)
    lat = np.arcsin(z)
    lon = np.arctan2(xyz[..., 1], xyz[..., 0])
    polar = (xyz[..., 0] == 0.0) & (xyz[..., 1] == 0.0)
    lon = np.where(polar, 0.0, lon)
    # atan2 can return +pi; keep longitudes in [-pi, pi)
    lon = np.where(lon >= np.pi, lon - 2.0 * np.pi, lon)
    return lat, lon


def latitude_longitude(vertex, atol: float = 1e-12) -> tuple[float, float]:
    """Return ``(latitude, longitude)`` of a point on the unit sphere.

    Latitude is ``arcsin(z)`` and longitude ``atan2(y, x)``; both poles get
    longitude 0.
    """
    v = np.asarray(vertex, dtype=float)
    if v.shape != (3,):
        raise InvalidArgumentError("expected a 3-vector")
    if abs(np.linalg.norm(v) - 1.0) > atol:
        raise InvalidArgumentError(f"point {v} is not on the unit sphere")
    lat, lon = _latlon(v)
    return float(lat), float(lon)

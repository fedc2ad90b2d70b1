"""File output: legacy VTK, CSV tables and run manifests."""

from __future__ import annotations

import csv
import json
import platform
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import InvalidArgumentError
from .mesh import SphereMesh

SERIES_HEADER = ("step", "Pi", "Z", "E", "C3", "C4", "C3_roll", "C4_roll")
HISTOGRAM_HEADER = ("bin_lo", "bin_hi", "count")
CONVERGENCE_HEADER = ("refinement", "h", "std_Pi", "std_Z")
MIXING_HEADER = ("F", "inv_sqrt_F", "delta_C4")
SAMPLES_HEADER = ("index", "Pi", "Z")
FIELD_HEADER = ("index", "value")

MANIFEST_NAME = "manifest.json"


def write_vtk(path, mesh: SphereMesh, point_data: Mapping[str, np.ndarray] | None = None,
              title: str = "sqgfem mesh") -> Path:
    """Write the mesh (and optional nodal scalars) as legacy ASCII VTK."""
    path = Path(path)
    point_data = dict(point_data or {})
    n, nc = mesh.n_vertices, mesh.n_triangles
    for name, values in point_data.items():
        if np.shape(values) != (n,):
            raise InvalidArgumentError(f"point data {name!r} has shape {np.shape(values)}, expected ({n},)")
        if any(c.isspace() for c in name):
            raise InvalidArgumentError(f"point data name {name!r} contains whitespace")
    with path.open("w", encoding="ascii") as fh:
        fh.write(f"# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {n} double\n")
        np.savetxt(fh, mesh.vertices, fmt="%.17g")
        fh.write(f"CELLS {nc} {4 * nc}\n")
        np.savetxt(fh, np.column_stack([np.full(nc, 3), mesh.triangles]), fmt="%d")
        fh.write(f"CELL_TYPES {nc}\n")
        np.savetxt(fh, np.full(nc, 5), fmt="%d")
        if point_data:
            fh.write(f"POINT_DATA {n}\n")
            for name, values in point_data.items():
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                np.savetxt(fh, np.asarray(values, dtype=float), fmt="%.17g")
    return path


def read_vtk_points(path) -> tuple[np.ndarray, np.ndarray, dict[str, np.ndarray]]:
    """Read back what :func:`write_vtk` wrote: ``(points, triangles, point_data)``."""
    tokens = Path(path).read_text(encoding="ascii").split()
    i = tokens.index("POINTS")
    n = int(tokens[i + 1])
    pts = np.array(tokens[i + 3:i + 3 + 3 * n], dtype=float).reshape(n, 3)
    i = tokens.index("CELLS")
    nc = int(tokens[i + 1])
    cells = np.array(tokens[i + 3:i + 3 + 4 * nc], dtype=int).reshape(nc, 4)[:, 1:]
    data = {}
    k = 0
    while True:
        try:
            k = tokens.index("SCALARS", k)
        except ValueError:
            break
        name = tokens[k + 1]
        start = k + 6
        data[name] = np.array(tokens[start:start + n], dtype=float)
        k = start + n
    return pts, cells, data


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return path


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return header, np.array(body, dtype=float).reshape(len(body), len(header))


def write_series(path, series) -> Path:
    return write_csv(path, SERIES_HEADER, series.rows())


def write_histogram(path, edges: np.ndarray, counts: np.ndarray) -> Path:
    return write_csv(path, HISTOGRAM_HEADER, zip(edges[:-1], edges[1:], counts))


def write_field(path, values: np.ndarray) -> Path:
    return write_csv(path, FIELD_HEADER, enumerate(np.asarray(values, dtype=float)))


def read_field(path, n: int | None = None) -> np.ndarray:
    """Nodal vector from an ``index,value`` CSV (rows may be in any order)."""
    header, data = read_csv(path)
    if header[:2] != list(FIELD_HEADER):
        raise InvalidArgumentError(f"{path}: expected header index,value, got {header}")
    idx = data[:, 0].astype(int)
    size = n if n is not None else len(idx)
    if sorted(idx.tolist()) != list(range(size)):
        raise InvalidArgumentError(f"{path}: indices must cover 0..{size - 1} exactly once")
    out = np.empty(size)
    out[idx] = data[:, 1]
    return out


def write_manifest(directory, cfg, extra: Mapping | None = None) -> Path:
    """Record config, its digest and seed so the run can be repeated exactly."""
    directory = Path(directory)
    payload = {
        "config": cfg.to_dict(),
        "config_text": cfg.serialise(),
        "config_sha256": cfg.digest(),
        "seed": cfg.seed,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    try:
        import scipy

        payload["scipy"] = scipy.__version__
    except ImportError:  # pragma: no cover
        pass
    if extra:
        payload["results"] = dict(extra)
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n", encoding="utf-8")
    return path


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def read_manifest(directory) -> dict:
    return json.loads((Path(directory) / MANIFEST_NAME).read_text(encoding="utf-8"))

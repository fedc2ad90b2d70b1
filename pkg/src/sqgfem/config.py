"""Experiment configuration: parsing, validation, serialisation, topography."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidArgumentError
from .mesh import MAX_REFINEMENT, SphereMesh

EXPERIMENTS = (
    "conservation",
    "moments-compare",
    "mixing-ensemble",
    "resolution-convergence",
    "topography",
    "gibbs-sample",
)
TOPOGRAPHIES = ("none", "one-mountain", "two-mountain", "custom")
INITIAL_CONDITIONS = ("sin-lat", "random", "constant", "custom")
CORIOLIS_MODES = ("sin-lat", "zero")

ONE_MOUNTAIN = ((math.pi / 6, 3 * math.pi / 2),)
TWO_MOUNTAINS = ((math.pi / 6, -math.pi / 4), (math.pi / 6, math.pi / 4))


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.replace(",", " ").split())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.replace(",", " ").split())


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment.

    Numeric ranges are checked in ``__post_init__``; a bad value raises
    :class:`ConfigError` naming the key.
    """

    experiment: str
    seed: int
    refinement: int = 3
    steps: int = 1000
    samples: int = 10_000
    dt: float = 1.0
    froude: float = 1.0
    sigma: float = 0.05
    noise_count: int = 9
    coriolis: str = "sin-lat"
    omega: float = 1.0
    topography: str = "none"
    topography_file: str = ""
    mountain_height: float = 2.0
    mountain_radius: float = math.pi / 9
    literal_radius: bool = False
    initial: str = "sin-lat"
    initial_file: str = ""
    initial_value: float = 0.0
    initial_pi: float = 0.0
    initial_z: float = 0.0
    sampler: str = "exact"
    burn_in: int = 1000
    zprime_samples: int = 10_000
    ensemble: int = 10
    froude_values: tuple = (0.5, 2.0, 8.0, 32.0)
    refinements: tuple = (2, 3, 4)
    bins: int = 50
    snapshot_every: int = 0
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    mean_square_mode: str = "nodal"
    plots: bool = True
    output: str = "output"

    def __post_init__(self):
        def bad(key, why):
            raise ConfigError(f"{key}: {why} (got {getattr(self, key)!r})")

        if self.experiment not in EXPERIMENTS:
            bad("experiment", f"must be one of {', '.join(EXPERIMENTS)}")
        if not 0 <= self.refinement <= MAX_REFINEMENT:
            bad("refinement", f"must be in [0, {MAX_REFINEMENT}]")
        for key in ("steps", "burn_in", "snapshot_every"):
            if getattr(self, key) < 0:
                bad(key, "must be >= 0")
        for key in ("samples", "ensemble", "bins", "noise_count", "newton_max_iter"):
            if getattr(self, key) < 1:
                bad(key, "must be >= 1")
        if self.zprime_samples < 100:
            bad("zprime_samples", "must be >= 100")
        if not self.dt > 0:
            bad("dt", "must be positive")
        if not self.froude >= 0:
            bad("froude", "must be >= 0")
        if not self.sigma >= 0:
            bad("sigma", "must be >= 0")
        if not self.newton_tol > 0:
            bad("newton_tol", "must be positive")
        if not self.mountain_radius > 0:
            bad("mountain_radius", "must be positive")
        if self.coriolis not in CORIOLIS_MODES:
            bad("coriolis", f"must be one of {', '.join(CORIOLIS_MODES)}")
        if self.topography not in TOPOGRAPHIES:
            bad("topography", f"must be one of {', '.join(TOPOGRAPHIES)}")
        if self.topography == "custom" and not self.topography_file:
            bad("topography_file", "required when topography=custom")
        if self.initial not in INITIAL_CONDITIONS:
            bad("initial", f"must be one of {', '.join(INITIAL_CONDITIONS)}")
        if self.initial == "custom" and not self.initial_file:
            bad("initial_file", "required when initial=custom")
        if self.sampler not in ("independence", "sitewise", "exact"):
            bad("sampler", "must be independence, sitewise or exact")
        if self.mean_square_mode not in ("nodal", "projected"):
            bad("mean_square_mode", "must be nodal or projected")
        if not self.froude_values or any(not f >= 0 for f in self.froude_values):
            bad("froude_values", "must be a non-empty list of values >= 0")
        if not self.refinements or any(not 0 <= r <= MAX_REFINEMENT for r in self.refinements):
            bad("refinements", f"must be a non-empty list in [0, {MAX_REFINEMENT}]")

    def serialise(self) -> str:
        """``key=value`` lines that :func:`parse_config` maps back to ``self``."""
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(repr(x) for x in v)
            elif isinstance(v, float):
                v = repr(v)
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def digest(self) -> str:
        return hashlib.sha256(self.serialise().encode()).hexdigest()

    def with_overrides(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_ALIASES = {"F": "froude", "T": "steps", "n": "samples", "out": "output", "r": "refinement"}


def _convert(key: str, raw):
    default = _FIELDS[key].default
    if key == "experiment":
        return str(raw)
    if key == "seed":
        return int(raw)
    if isinstance(default, bool):
        return raw if isinstance(raw, bool) else _bool(str(raw))
    if isinstance(default, int):
        if isinstance(raw, float) and not raw.is_integer():
            raise ValueError(f"expected an integer, got {raw}")
        return int(float(raw)) if isinstance(raw, str) and "e" in raw.lower() else int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        conv = _ints if key == "refinements" else _floats
        if isinstance(raw, (list, tuple)):
            return tuple((int if key == "refinements" else float)(x) for x in raw)
        return conv(str(raw))
    return str(raw)


def config_from_mapping(values: dict, where: dict | None = None) -> ExperimentConfig:
    """Validate a ``{key: raw value}`` mapping; ``where`` maps keys to line labels."""
    where = where or {}
    kw = {}
    for key, raw in values.items():
        name = _ALIASES.get(key, key).replace("-", "_")
        label = where.get(key, key)
        if name not in _FIELDS:
            raise ConfigError(f"{label}: unknown key {key!r}")
        try:
            kw[name] = _convert(name, raw)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{label}: bad value for {key}: {exc}") from None
    if "experiment" not in kw:
        raise ConfigError("missing required key 'experiment'")
    if "seed" not in kw:
        raise ConfigError("missing required key 'seed'")
    try:
        return ExperimentConfig(**kw)
    except ConfigError as exc:
        key = str(exc).split(":", 1)[0]
        for raw_key, label in where.items():
            if _ALIASES.get(raw_key, raw_key).replace("-", "_") == key:
                raise ConfigError(f"{label}: {exc}") from None
        raise


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key=value`` tokens (whitespace or newline separated) or a JSON object.

    ``#`` starts a comment.  Repeated keys are an error.
    """
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            data = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}: invalid JSON: {exc.msg}") from None
        if not isinstance(data, dict):
            raise ConfigError("JSON config must be an object")
        return config_from_mapping(data)
    values, where = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0]
        for token in line.split():
            if "=" not in token:
                raise ConfigError(f"line {lineno}: expected key=value, got {token!r}")
            key, raw = token.split("=", 1)
            key = key.strip()
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            values[key] = raw
            where[key] = f"line {lineno}"
    return config_from_mapping(values, where)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def _wrap(angle):
    return (np.asarray(angle) + np.pi) % (2 * np.pi) - np.pi


def mountain(lat: np.ndarray, lon: np.ndarray, centre: tuple[float, float], height: float = 2.0,
             radius: float = math.pi / 9, literal: bool = False) -> np.ndarray:
    """Conical mountain ``h0 (1 - r / R)`` in latitude/longitude coordinates.

    ``r = sqrt(min(R^2, d^2))`` with ``d^2 = dlat^2 + dlon^2``; the longitude
    difference is wrapped into ``[-pi, pi)``.  ``literal=True`` drops the
    square root, i.e. ``r = min(R^2, d^2)``.
    """
    if not radius > 0:
        raise InvalidArgumentError(f"mountain radius must be positive, got {radius}")
    d2 = (lat - centre[0]) ** 2 + _wrap(lon - centre[1]) ** 2
    clipped = np.minimum(radius**2, d2)
    r = clipped if literal else np.sqrt(clipped)
    return height * (1.0 - r / radius)


def build_topography(spec: str, mesh: SphereMesh, height: float = 2.0,
                     radius: float = math.pi / 9, literal: bool = False,
                     custom: np.ndarray | None = None) -> np.ndarray:
    """Nodal topography ``h`` for ``spec`` in :data:`TOPOGRAPHIES`."""
    if spec == "none":
        return np.zeros(mesh.n_vertices)
    if spec == "custom":
        if custom is None:
            raise InvalidArgumentError("custom topography needs nodal values")
        h = np.asarray(custom, dtype=float)
        if h.shape != (mesh.n_vertices,):
            raise InvalidArgumentError(f"custom topography has shape {h.shape}, expected ({mesh.n_vertices},)")
        return h
    centres = {"one-mountain": ONE_MOUNTAIN, "two-mountain": TWO_MOUNTAINS}.get(spec)
    if centres is None:
        raise InvalidArgumentError(f"unknown topography {spec!r}")
    lat, lon = mesh.latlon
    return sum(mountain(lat, lon, c, height, radius, literal) for c in centres)

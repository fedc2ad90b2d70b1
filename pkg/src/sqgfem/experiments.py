"""Seeded experiment drivers.

Each driver takes an :class:`~sqgfem.config.ExperimentConfig`, writes CSV
and VTK files (and figures, unless disabled) into the output directory
together with a manifest, and returns an :class:`ExperimentResult`.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .config import ExperimentConfig, build_topography
from .diagnostics import (
    SeriesRecorder,
    casimir,
    energy_bound_constant,
    histogram,
    mean_square_field,
    mixing_proxy,
    spatial_variance,
)
from .dynamics import (
    NewtonSettings,
    Stepper,
    build_noise_basis,
    initial_state,
    make_physics,
)
from .errors import InvalidArgumentError
from .fem import Operators, assemble_operators, l2_project
from .mesh import SphereMesh, build_icosphere
from .rng import sampler_generator
from .statmech import fluctuation_blocks, make_target, iter_gibbs, transform_sample

logger = logging.getLogger(__name__)

OUTPUT_ENV = "SQGFEM_OUTPUT_DIR"

# independent generator streams drawn from the run seed
_STREAM_INITIAL, _STREAM_ZPRIME, _STREAM_BATCH = 0, 1, 2


@dataclass
class Setup:
    """Mesh, operators, physics and noise basis for one refinement and ``F``."""

    mesh: SphereMesh
    ops: Operators
    physics: object
    basis: object

    def stepper(self, newton: NewtonSettings) -> Stepper:
        return Stepper(self.physics, self.ops, self.basis, newton)


@dataclass
class ExperimentResult:
    experiment: str
    output: Path
    files: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)


def output_directory(cfg: ExperimentConfig) -> Path:
    """``$SQGFEM_OUTPUT_DIR`` if set, else ``cfg.output``; created if missing."""
    path = Path(os.environ.get(OUTPUT_ENV) or cfg.output)
    path.mkdir(parents=True, exist_ok=True)
    return path


def build_setup(cfg: ExperimentConfig, refinement: int | None = None,
                froude: float | None = None, topography: str | None = None) -> Setup:
    r = cfg.refinement if refinement is None else refinement
    mesh = build_icosphere(r)
    ops = assemble_operators(mesh)
    spec = cfg.topography if topography is None else topography
    custom = io.read_field(cfg.topography_file, mesh.n_vertices) if spec == "custom" else None
    h = build_topography(spec, mesh, cfg.mountain_height, cfg.mountain_radius,
                         cfg.literal_radius, custom)
    physics = make_physics(
        ops,
        froude=cfg.froude if froude is None else froude,
        sigma=cfg.sigma,
        dt=cfg.dt,
        omega=cfg.omega if cfg.coriolis == "sin-lat" else 0.0,
        topography=h,
    )
    basis = build_noise_basis(mesh, ops, cfg.sigma, cfg.noise_count)
    return Setup(mesh, ops, physics, basis)


def newton_settings(cfg: ExperimentConfig) -> NewtonSettings:
    return NewtonSettings(tol=cfg.newton_tol, max_iter=cfg.newton_max_iter)


def sin_latitude(ops: Operators) -> np.ndarray:
    return l2_project(lambda x: x[..., 2], ops).coefficients


def initial_condition(cfg: ExperimentConfig, ops: Operators) -> np.ndarray:
    """Nodal ``q0`` for ``cfg.initial``.

    ``"random"`` is one transformed Gibbs sample with totals
    ``initial_pi``/``initial_z`` (those of the latitude profile when
    ``initial_z`` is 0).
    """
    if cfg.initial == "sin-lat":
        return sin_latitude(ops)
    if cfg.initial == "constant":
        return np.full(ops.n, float(cfg.initial_value))
    if cfg.initial == "custom":
        return io.read_field(cfg.initial_file, ops.n)
    p0, z0 = _target_totals(cfg, ops)
    rng = sampler_generator(cfg.seed, _STREAM_INITIAL)
    target = make_target(p0, z0, ops, rng, cfg.zprime_samples, cfg.sampler, cfg.burn_in)
    draw = next(fluctuation_blocks(1, ops, rng, cfg.sampler, cfg.burn_in))
    return transform_sample(draw[0], target)


def _target_totals(cfg: ExperimentConfig, ops: Operators) -> tuple[float, float]:
    if cfg.initial_z > 0:
        return cfg.initial_pi, cfg.initial_z
    q = sin_latitude(ops)
    return ops.pi(q), ops.enstrophy(q)


def relative_drifts(series, ops: Operators) -> dict:
    """Worst relative deviation of ``Pi``, ``Z`` and ``E`` from their first record.

    ``Pi`` is measured against ``max(|Pi0|, sqrt(2 A Z0))`` because the
    latitude profile has ``Pi0 = 0``.
    """
    pi, z = series.array("pi"), series.array("z")
    out = {
        "pi_drift": float(np.max(np.abs(pi - pi[0])) / max(abs(pi[0]), np.sqrt(2 * ops.total_area * z[0]))),
        "z_drift": float(np.max(np.abs(z - z[0])) / z[0]) if z[0] > 0 else 0.0,
    }
    if len(series.energy) == len(z) and len(z):
        e = series.array("energy")
        out["e_drift"] = float(np.max(np.abs(e - e[0])) / e[0]) if e[0] > 0 else 0.0
        if z[0] > 0:
            out["max_e_over_z"] = float(np.max(e / z))
    return out


def fluid_run(setup: Setup, q0: np.ndarray, steps: int, seed: int, newton: NewtonSettings,
              member: int = 0, energy: bool = True, snapshot_every: int = 0,
              snapshot_dir: Path | None = None):
    """One trajectory with a recorder attached; returns its series."""
    stepper = setup.stepper(newton)
    recorder = SeriesRecorder(setup.ops, setup.physics, helmholtz=stepper.helmholtz, energy=energy)
    state = initial_state(q0, setup.physics, setup.ops, seed, member)
    hooks = [recorder]
    if snapshot_every and snapshot_dir is not None:
        def snap(st):
            if st.step_index % snapshot_every == 0:
                io.write_vtk(snapshot_dir / f"q_{st.step_index:07d}.vtk", setup.mesh, {"q": st.q})
        hooks.append(snap)
    for hook in hooks:
        hook(state)
    for _ in range(steps):
        state = stepper.step(state)
        for hook in hooks:
            hook(state)
    recorder.series.final_state = state
    return recorder.series


def gibbs_batch(setup: Setup, p0: float, z0: float, n: int, cfg: ExperimentConfig, with_psi: bool = False):
    """Transformed Gibbs samples fed through a recorder; returns its series."""
    ops = setup.ops
    target = make_target(p0, z0, ops, sampler_generator(cfg.seed, _STREAM_ZPRIME),
                         cfg.zprime_samples, cfg.sampler, cfg.burn_in)
    recorder = SeriesRecorder(ops, setup.physics, energy=with_psi)
    counts: dict = {}
    rng = sampler_generator(cfg.seed, _STREAM_BATCH)
    for blk in iter_gibbs(n, target, rng, cfg.sampler, cfg.burn_in, counts):
        recorder.add_rows(blk)
    series = recorder.series
    series.final_state = {"zprime": target.zprime, "acceptance": counts.get("accepted", 0) / max(counts.get("proposed", 1), 1)}
    return series


def _finish(cfg, out, files, summary, plots) -> ExperimentResult:
    if cfg.plots:
        try:
            files.extend(plots())
        except ImportError as exc:  # pragma: no cover - matplotlib missing
            logger.warning("plots skipped: %s", exc)
    files.append(io.write_manifest(out, cfg, summary))
    return ExperimentResult(cfg.experiment, out, files, summary)


def _casimir_gap(a: float, b: float, p: int, z0: float, area: float) -> float:
    """Relative gap, measured against ``max(|b|, A (2 Z0 / A)^(p/2))``."""
    scale = max(abs(b), area * (2.0 * z0 / area) ** (p / 2))
    return abs(a - b) / scale


def run_conservation(cfg: ExperimentConfig) -> ExperimentResult:
    out = output_directory(cfg)
    setup = build_setup(cfg)
    q0 = initial_condition(cfg, setup.ops)
    snaps = out / "snapshots" if cfg.snapshot_every else None
    if snaps:
        snaps.mkdir(exist_ok=True)
    series = fluid_run(setup, q0, cfg.steps, cfg.seed, newton_settings(cfg),
                       snapshot_every=cfg.snapshot_every, snapshot_dir=snaps)
    summary = relative_drifts(series, setup.ops)
    z0 = series.z[0]
    if z0 > 0:
        summary["energy_bound"] = energy_bound_constant(setup.ops, setup.physics, z0)
    files = [io.write_series(out / "series.csv", series)]
    files.append(io.write_vtk(out / "final.vtk", setup.mesh,
                              {"q0": q0, "q": series.final_state.q}))

    def plots():
        from . import plotting
        return [plotting.plot_invariants(out / "invariants.png", series)]

    result = _finish(cfg, out, files, summary, plots)
    result.series["fluid"] = series
    return result


def run_moments_compare(cfg: ExperimentConfig) -> ExperimentResult:
    out = output_directory(cfg)
    setup = build_setup(cfg)
    ops = setup.ops
    q0 = initial_condition(cfg, ops)
    p0, z0 = ops.pi(q0), ops.enstrophy(q0)
    fluid = fluid_run(setup, q0, cfg.steps, cfg.seed, newton_settings(cfg))
    gibbs = gibbs_batch(setup, p0, z0, cfg.samples, cfg)
    area = ops.total_area
    fq2 = mean_square_field(fluid, ops, cfg.mean_square_mode)
    gq2 = mean_square_field(gibbs, ops, cfg.mean_square_mode)
    summary = relative_drifts(fluid, ops)
    summary.update({
        "P0": p0,
        "Z0": z0,
        "fluid_C3_roll": float(fluid.rolling("c3")[-1]),
        "gibbs_C3_roll": float(gibbs.rolling("c3")[-1]),
        "fluid_C4_roll": float(fluid.rolling("c4")[-1]),
        "gibbs_C4_roll": float(gibbs.rolling("c4")[-1]),
        "zprime": gibbs.final_state["zprime"],
        "acceptance": gibbs.final_state["acceptance"],
        "mean_q2_correlation": float(np.corrcoef(fq2, gq2)[0, 1]),
        "fluid_q2_variance": spatial_variance(fq2, ops),
        "gibbs_q2_variance": spatial_variance(gq2, ops),
        "energy_bound": energy_bound_constant(ops, setup.physics, z0),
    })
    summary["C3_gap"] = _casimir_gap(summary["fluid_C3_roll"], summary["gibbs_C3_roll"], 3, z0, area)
    summary["C4_gap"] = _casimir_gap(summary["fluid_C4_roll"], summary["gibbs_C4_roll"], 4, z0, area)
    files = [
        io.write_series(out / "fluid_series.csv", fluid),
        io.write_series(out / "gibbs_series.csv", gibbs),
        io.write_field(out / "fluid_mean_q2.csv", fq2),
        io.write_field(out / "gibbs_mean_q2.csv", gq2),
        io.write_vtk(out / "mean_q2.vtk", setup.mesh, {"fluid_mean_q2": fq2, "gibbs_mean_q2": gq2}),
    ]

    def plots():
        from . import plotting
        return [
            plotting.plot_rolling_casimirs(out / "rolling_casimirs.png", fluid, gibbs),
            plotting.plot_field_pair(out / "mean_q2.png", setup.mesh, fq2, gq2,
                                     ("fluid mean $q^2$", "Gibbs mean $q^2$")),
        ]

    result = _finish(cfg, out, files, summary, plots)
    result.series.update(fluid=fluid, gibbs=gibbs)
    return result


def run_mixing_ensemble(cfg: ExperimentConfig) -> ExperimentResult:
    """Ensemble ``|<C4(q^T)> - C4(q^0)|`` for each ``F`` in ``cfg.froude_values``."""
    out = output_directory(cfg)
    newton = newton_settings(cfg)
    rows, per_member = [], []
    mesh = ops = None
    for F in cfg.froude_values:
        setup = build_setup(cfg, froude=F)
        mesh, ops = setup.mesh, setup.ops
        q0 = initial_condition(cfg, ops)
        c4_0 = casimir(q0, 4, mesh)
        stepper = setup.stepper(newton)
        finals = []
        for member in range(cfg.ensemble):
            state = initial_state(q0, setup.physics, ops, cfg.seed, member)
            for _ in range(cfg.steps):
                state = stepper.step(state)
            finals.append(casimir(state.q, 4, mesh))
            per_member.append((F, member, finals[-1]))
        delta = mixing_proxy(finals, c4_0)
        rows.append((F, 1.0 / np.sqrt(F) if F > 0 else np.inf, delta))
        logger.info("F=%g: delta C4 = %.6g", F, delta)
    files = [
        io.write_csv(out / "mixing.csv", io.MIXING_HEADER, rows),
        io.write_csv(out / "mixing_members.csv", ("F", "member", "C4_final"), per_member),
    ]
    deltas = [r[2] for r in rows]
    summary = {
        "froude_values": list(cfg.froude_values),
        "delta_C4": deltas,
        "strictly_decreasing": bool(all(a > b for a, b in zip(deltas, deltas[1:]))),
    }

    def plots():
        from . import plotting
        return [plotting.plot_mixing(out / "mixing.png", rows)]

    return _finish(cfg, out, files, summary, plots)


def run_resolution_convergence(cfg: ExperimentConfig) -> ExperimentResult:
    """Untransformed Gibbs batches per refinement: normalised ``Pi``/``Z`` spreads.

    ``Pi`` is divided by ``sqrt(<Z>)`` and ``Z`` by ``<Z>``, which removes
    the growth of ``Z'`` with the number of unknowns.  When ``steps > 0``
    the spatial variance of the fluid mean-``q^2`` field is also recorded.
    """
    out = output_directory(cfg)
    conv_rows, var_rows, hists = [], [], {}
    for r in cfg.refinements:
        setup = build_setup(cfg, refinement=r)
        ops = setup.ops
        rng = sampler_generator(cfg.seed, _STREAM_BATCH + r)
        pis, zs = [], []
        for blk in fluctuation_blocks(cfg.samples, ops, rng, cfg.sampler, cfg.burn_in):
            pis.append(blk @ ops.area_vector)
            zs.append(0.5 * np.einsum("ij,ij->i", blk, (ops.mass @ blk.T).T))
        pi, z = np.concatenate(pis), np.concatenate(zs)
        zbar = z.mean()
        pi_n, z_n = pi / np.sqrt(zbar), z / zbar
        e_pi, c_pi, s_pi = histogram(pi_n, cfg.bins)
        e_z, c_z, s_z = histogram(z_n, cfg.bins)
        hists[r] = ((e_pi, c_pi), (e_z, c_z))
        io.write_histogram(out / f"hist_Pi_r{r}.csv", e_pi, c_pi)
        io.write_histogram(out / f"hist_Z_r{r}.csv", e_z, c_z)
        io.write_csv(out / f"samples_r{r}.csv", io.SAMPLES_HEADER, zip(range(len(pi)), pi, z))
        conv_rows.append((r, setup.mesh.mean_edge_length, s_pi, s_z))
        if cfg.steps > 0:
            q0 = initial_condition(cfg, ops)
            fluid = fluid_run(setup, q0, cfg.steps, cfg.seed, newton_settings(cfg), energy=False)
            var_rows.append((r, setup.mesh.mean_edge_length,
                             spatial_variance(mean_square_field(fluid, ops, cfg.mean_square_mode), ops)))
    files = [io.write_csv(out / "convergence.csv", io.CONVERGENCE_HEADER, conv_rows)]
    files += [out / f"hist_{k}_r{r}.csv" for r in cfg.refinements for k in ("Pi", "Z")]
    if var_rows:
        files.append(io.write_csv(out / "q2_variance.csv", ("refinement", "h", "variance"), var_rows))
    std_pi = [row[2] for row in conv_rows]
    std_z = [row[3] for row in conv_rows]
    summary = {
        "refinements": list(cfg.refinements),
        "std_Pi": std_pi,
        "std_Z": std_z,
        "ratio_Pi": [b / a for a, b in zip(std_pi, std_pi[1:])],
        "ratio_Z": [b / a for a, b in zip(std_z, std_z[1:])],
    }
    if var_rows:
        summary["q2_variance"] = [row[2] for row in var_rows]

    def plots():
        from . import plotting
        return [
            plotting.plot_histograms(out / "histograms.png", hists),
            plotting.plot_convergence(out / "convergence.png", conv_rows),
        ]

    return _finish(cfg, out, files, summary, plots)


def run_topography(cfg: ExperimentConfig) -> ExperimentResult:
    """Fluid versus Gibbs time-mean stream function over topography."""
    if cfg.topography == "none":
        raise InvalidArgumentError("topography experiment needs a topography other than 'none'")
    out = output_directory(cfg)
    setup = build_setup(cfg)
    ops = setup.ops
    q0 = initial_condition(cfg, ops)
    p0, z0 = ops.pi(q0), ops.enstrophy(q0)
    fluid = fluid_run(setup, q0, cfg.steps, cfg.seed, newton_settings(cfg))
    gibbs = gibbs_batch(setup, p0, z0, cfg.samples, cfg, with_psi=True)
    fpsi, gpsi = fluid.mean_field("psi"), gibbs.mean_field("psi")
    summary = relative_drifts(fluid, ops)
    summary.update({
        "P0": p0,
        "Z0": z0,
        "mean_psi_correlation": float(np.corrcoef(fpsi, gpsi)[0, 1]),
        "energy_bound": energy_bound_constant(ops, setup.physics, z0),
    })
    files = [
        io.write_series(out / "fluid_series.csv", fluid),
        io.write_field(out / "fluid_mean_psi.csv", fpsi),
        io.write_field(out / "gibbs_mean_psi.csv", gpsi),
        io.write_vtk(out / "mean_psi.vtk", setup.mesh,
                     {"fluid_mean_psi": fpsi, "gibbs_mean_psi": gpsi, "h": setup.physics.topography}),
    ]

    def plots():
        from . import plotting
        return [plotting.plot_field_pair(out / "mean_psi.png", setup.mesh, fpsi, gpsi,
                                         (r"fluid mean $\psi$", r"Gibbs mean $\psi$"))]

    result = _finish(cfg, out, files, summary, plots)
    result.series.update(fluid=fluid, gibbs=gibbs)
    return result


def run_gibbs_sample(cfg: ExperimentConfig) -> ExperimentResult:
    """Raw transformed batch: per-sample ``Pi``, ``Z`` plus histograms."""
    out = output_directory(cfg)
    setup = build_setup(cfg)
    ops = setup.ops
    p0, z0 = _target_totals(cfg, ops)
    gibbs = gibbs_batch(setup, p0, z0, cfg.samples, cfg)
    pi, z = gibbs.array("pi"), gibbs.array("z")
    files = [io.write_csv(out / "samples.csv", io.SAMPLES_HEADER, zip(range(len(pi)), pi, z))]
    summary = {"P0": p0, "Z0": z0, "zprime": gibbs.final_state["zprime"],
               "acceptance": gibbs.final_state["acceptance"],
               "mean_Pi": float(pi.mean()), "mean_Z": float(z.mean())}
    if len(pi) >= 2:
        e_pi, c_pi, summary["std_Pi"] = histogram(pi, cfg.bins)
        e_z, c_z, summary["std_Z"] = histogram(z, cfg.bins)
        files += [io.write_histogram(out / "hist_Pi.csv", e_pi, c_pi),
                  io.write_histogram(out / "hist_Z.csv", e_z, c_z)]
    q2 = mean_square_field(gibbs, ops, cfg.mean_square_mode)
    files.append(io.write_vtk(out / "mean_q2.vtk", setup.mesh, {"mean_q": gibbs.mean_field("q"), "mean_q2": q2}))

    def plots():
        from . import plotting
        return [plotting.plot_histograms(out / "histograms.png",
                                         {cfg.refinement: ((e_pi, c_pi), (e_z, c_z))})] if len(pi) >= 2 else []

    result = _finish(cfg, out, files, summary, plots)
    result.series["gibbs"] = gibbs
    return result


DRIVERS = {
    "conservation": run_conservation,
    "moments-compare": run_moments_compare,
    "mixing-ensemble": run_mixing_ensemble,
    "resolution-convergence": run_resolution_convergence,
    "topography": run_topography,
    "gibbs-sample": run_gibbs_sample,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    return DRIVERS[cfg.experiment](cfg)

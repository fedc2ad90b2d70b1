"""Enstrophy- and PV-conserving P1 finite elements for stochastic QG on the sphere."""

from .errors import ConfigError, InvalidArgumentError, InvalidStateError, NumericalError, SQGError
from .mesh import SphereMesh, build_icosphere, cell_geometry, latitude_longitude
from .fem import Field, Operators, assemble_operators, l2_project, perp_advection_apply
from .dynamics import (
    NewtonSettings,
    NoiseBasis,
    PhysicsConfig,
    SimState,
    Stepper,
    build_noise_basis,
    initial_state,
    invert_pv,
    make_physics,
    run,
    step,
)
from .statmech import (
    GibbsTarget,
    SampleBatch,
    estimate_zprime,
    exact_gaussian_samples,
    gibbs_sample,
    make_target,
    metropolis_chain,
    propose_lumped,
    transform_sample,
)
from .diagnostics import (
    DiagnosticSeries,
    SeriesRecorder,
    casimir,
    energy,
    histogram,
    mean_square_field,
    mixing_proxy,
    spatial_variance,
)
from .config import ExperimentConfig, build_topography, parse_config

__version__ = "0.1.0"

"""Pathwise solver for symmetric-integral SDEs driven by continuous
stochastic measures, with Monte Carlo experiments for the averaged-system
convergence rate."""

__version__ = "0.1.0"

from .averaging import A4Report, DriftSpec, averaged_drift, check_a4, g_function
from .errors import (
    BoundViolationError,
    ConfigurationError,
    ExperimentError,
    InversionError,
    NumericalError,
    SymSdeError,
    UnsupportedDriftError,
)
from .experiment import (
    BoundednessReport,
    CrosscheckReport,
    EpsilonStats,
    ExperimentConfig,
    RateFit,
    boundedness_diagnostic,
    fit_rate,
    ito_crosscheck_experiment,
    run_averaging_experiment,
    write_rates_csv,
    write_rates_svg,
)
from .flow import (
    DiffusionSpec,
    FlowMap,
    flow_dx,
    flow_forward,
    flow_inverse,
    flow_inverse_dx,
)
from .noise import (
    DriverSpec,
    NoiseGrid,
    NoisePath,
    downsample,
    generate_composite,
    generate_deterministic,
    generate_fbm,
    generate_subfbm,
    generate_wiener,
    read_path_csv,
    write_path_csv,
)
from .solver import (
    ModelSpec,
    Trajectory,
    downsample_trajectory,
    ito_reference_solve,
    solve_averaged,
    solve_scaled,
    sup_distance,
    write_trajectory_csv,
)
from .symint import PartitionSum, refinement_sums, residual, symmetric_integral

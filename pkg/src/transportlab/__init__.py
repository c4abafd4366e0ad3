"""Viscous nonlinear transport with nonlocal velocity couplings, and
kernel-weighted compactness diagnostics for its vanishing-viscosity limit."""

from .errors import (
    CFLViolation,
    ConfigError,
    FluxRangeError,
    HJDivergence,
    NumericalError,
    OracleSizeError,
    StructuralUnavailable,
    TransportLabError,
)
from .kernels import KernelSpec, NormalizedKernel
from .model import (
    BandLimitedRandom,
    Convolution,
    Custom,
    FluxFunction,
    GaussianBump,
    Grid,
    HamiltonJacobi,
    Indicator,
    Poisson,
    Prescribed,
    ScalarField,
    SimConfig,
    SourceFunction,
    VelocityField,
    eval_flux,
    eval_flux_derivative,
    initial_field,
)
from .scenarios import scenario, scenario_names
from .solver import EntropyPair, cfl_dt, entropy_residual, run, step

__version__ = "0.1.0"

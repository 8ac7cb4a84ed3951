"""Gaussian dynamics of a harmonically bound oscillator chain.

Exact and Bessel-kernel propagation of Gaussian states, local density
moments and their peaking ratios, and a hydrodynamic closure for the
coarse-grained fields.
"""

from .chain import (
    AffinePropagator,
    ChainParams,
    GaussianState,
    NoConfiningScaleError,
    approx_propagator,
    bessel_kernel,
    derived_params,
    energy_expectation,
    evolve,
    exact_propagator,
    symplectic_eigenvalues,
    validate_state,
)
from .decoherence import decoherence_scale, peaking_ratio, peaking_scan, smallk_asymptote
from .densities import (
    DensityField,
    SpectralMoment,
    correlation_profile,
    conservation_residual,
    real_space_fields,
    spectral_moment,
    temperature_field,
)
from .hydro import (
    HydroFields,
    build_local_equilibrium,
    equilibrium_profile,
    extract_fields,
    hydro_evolve,
    hydro_rhs,
)

__version__ = "0.1.0"

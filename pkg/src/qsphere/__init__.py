"""Little q-Jacobi spherical kernels on a q-lattice.

Submodules
----------
qseries
    q-Pochhammer symbols, ``r phi s`` series and the continued ``2 phi 1``.
lattice
    Lattice points ``+-q^k``, windows and graded functions.
kernels
    The matrix-entry kernels ``K_j^{sigma,tau}(p0; x)`` and their phases.
transform
    Graded spherical transform, its inverse and the density fit.
product
    Product-formula coefficients: fitted, analytic and verified.
suites, config, cli
    Verification suites, run configuration and the command line.
"""
from .errors import (
    ContinuationSingular,
    DivergentRatio,
    DomainError,
    GridMismatch,
    IllConditioned,
    MissingProvider,
    NegativePressure,
    Nonconvergent,
    QSphereError,
    ResidualTooLarge,
    TruncationFailure,
)
from .kernels import (
    MM,
    MP,
    PM,
    PP,
    CompanionConstants,
    Complementary,
    Discrete,
    PhaseProvider,
    Principal,
    SignPair,
    fit_phases,
    kernel,
    kernel_at,
    s_function,
)
from .lattice import GradedFunction, LatticePoint, LatticeWindow, enumerate_points, parse_point
from .product import AProvider, CoefficientSet, ProductVariant, coefficients_analytic, coefficients_fitted, normalization_check, verify
from .qseries import QBase, phi21_continued, phi21_regularized, phi_series, qpoch_finite, qpoch_infinite
from .reports import FitReport
from .transform import Density, KernelContext, SpectralGrid, SphericalField, fit_density, forward, inverse, roundtrip_report

__version__ = "0.1.0"

"""Numerical laboratory for radial dispersive equations with singular weights.

Covers fractional/biharmonic Schrodinger flows i u_t = K u - F(x, u) with
K = -Delta + lambda/|x|^2 or Delta^2, inverse-power-weighted local and nonlocal
(Riesz-convolution) focusing nonlinearities: ground states with variational-identity
certificates, sharp interpolation constants, symplectic split-step evolution with
blow-up detection, and decay/blow-up diagnostics on virial-type monitors.
"""

from .problem import (
    Choquard,
    CndViolation,
    DimensionTooSmall,
    HardyViolation,
    Local,
    ProblemSpec,
    RangeViolation,
    derive_exponents,
    validate_spec,
)
from .grid import (
    AlphaOutOfRange,
    FactorizationFailure,
    Grid,
    InvalidResolution,
    RadialField,
    make_grid,
    riesz_kernel,
)

__all__ = [
    "Choquard",
    "Local",
    "ProblemSpec",
    "derive_exponents",
    "validate_spec",
    "HardyViolation",
    "DimensionTooSmall",
    "RangeViolation",
    "CndViolation",
    "Grid",
    "RadialField",
    "make_grid",
    "riesz_kernel",
    "InvalidResolution",
    "AlphaOutOfRange",
    "FactorizationFailure",
]

__version__ = "0.1.0"

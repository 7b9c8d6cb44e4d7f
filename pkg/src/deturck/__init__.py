"""Numerical laboratory for Ricci DeTurck flow on a periodic box.

Evolves metric perturbations h = g - g_eucl, recovers Ricci flow by
integrating the gauge vector field, and measures the decay rates, local
integral bounds and heat-kernel estimates that the flow is expected to
satisfy for small initial data.
"""

from .errors import BlowUpError, ConfigError, DeturckError, SnapshotFormatError
from .grid import (
    CENTRAL4,
    SPECTRAL,
    DerivativeBackend,
    GridSpec,
    ScalarField,
    SymTensorField,
    VectorField,
    gradient,
    laplacian,
    pointwise_norm,
)

__version__ = "0.1.0"

__all__ = [
    "BlowUpError",
    "CENTRAL4",
    "ConfigError",
    "DerivativeBackend",
    "DeturckError",
    "GridSpec",
    "ScalarField",
    "SnapshotFormatError",
    "SPECTRAL",
    "SymTensorField",
    "VectorField",
    "__version__",
    "gradient",
    "laplacian",
    "pointwise_norm",
]

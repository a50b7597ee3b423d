"""Conditional neighborhood dependence: neighborhood systems, exact CI oracles,
random-field generators, bound evaluators and Monte Carlo experiments."""

__version__ = "0.1.0"

from .errors import CNDError, InputError, ResourceError, SchemaError  # noqa: E402
from .neighborhood import NeighborhoodSystem, boundary, closure, degrees  # noqa: E402

__all__ = [
    "CNDError",
    "InputError",
    "NeighborhoodSystem",
    "ResourceError",
    "SchemaError",
    "__version__",
    "boundary",
    "closure",
    "degrees",
]

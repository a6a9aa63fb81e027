"""Numerical Finsler geometry: tensors, duality, calculus and a first-eigenvalue solver."""

__version__ = "0.1.0"

from .errors import FinslerError  # noqa: E402
from .expr import ScalarField, VectorField, parse, evaluate  # noqa: E402
from .metric import ManifoldSpec, finsler_norm, fundamental_tensor, cartan_tensor, validate_spec  # noqa: E402

__all__ = ["FinslerError", "ManifoldSpec", "ScalarField", "VectorField", "parse", "evaluate",
           "finsler_norm", "fundamental_tensor", "cartan_tensor", "validate_spec", "__version__"]

"""Hamiltonian dynamics learning with Riemannian and symplectic structure."""

from ._backend import BACKEND_NAME

__version__ = "0.1.0"
__all__ = ["BACKEND_NAME", "__version__"]

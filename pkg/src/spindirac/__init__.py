"""Numerical checks of Dirac kernels on spin manifolds under surgery."""

__version__ = "0.1.0"

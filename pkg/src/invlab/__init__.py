"""Numerical laboratory for joint potential / point-source recovery from the
affine Dirichlet-to-Neumann map of a Schroedinger equation."""

__version__ = "0.1.0"

"""Singularly perturbed Hamilton-Jacobi problems on a double-well domain and their graph limit."""

__version__ = "0.1.0"

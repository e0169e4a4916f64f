"""Finite-volume drift-diffusion solvers that preserve positivity and steady states."""

__version__ = "0.1.0"

"""Neumann scattering by a locally rough surface: forward and inverse solvers."""

__version__ = "0.1.0"

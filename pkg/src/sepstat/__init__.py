"""Finite-dimensional simulator of registration and scattering with
separation-status changes."""

__version__ = "0.1.0"

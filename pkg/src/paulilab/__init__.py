"""Semiclassical Pauli-Poisson laboratory."""

__version__ = "0.1.0"

"""Simulation and verification tools for rank-based interacting diffusions."""

__version__ = "0.1.0"

"""Numerical laboratory for high-frequency instability of the linearized Prandtl equation."""

__version__ = "0.1.0"

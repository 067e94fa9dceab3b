"""Exact simulation, conditional-variance certification and dimension
experiments for anisotropic fractional Brownian sheets."""

__version__ = "0.1.0"

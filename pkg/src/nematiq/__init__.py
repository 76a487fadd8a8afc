"""Spectral laboratory for the 2D penalized stochastic nematic liquid crystal system."""

__version__ = "0.1.0"

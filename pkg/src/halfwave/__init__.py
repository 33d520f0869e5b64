"""Spectral laboratory for blowup of the 2D mass-critical half-wave equation."""

__version__ = "0.1.0"

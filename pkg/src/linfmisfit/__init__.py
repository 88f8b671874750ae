"""Lp-approximation of supremal boundary-misfit minimisation for coupled Robin systems."""

__version__ = "0.1.0"

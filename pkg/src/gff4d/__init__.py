"""Numerical toolkit for the four dimensional log-correlated Gaussian field."""

__version__ = "0.1.0"

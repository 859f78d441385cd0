"""Largest eigenvalue of symmetric Gaussian matrices with correlated, positive-mean entries."""

__version__ = "0.1.0"

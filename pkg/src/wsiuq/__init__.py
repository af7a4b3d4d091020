"""Uncertainty estimation and selective-classification benchmark on synthetic whole-slide data."""

__version__ = "0.1.0"

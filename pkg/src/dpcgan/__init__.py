"""Constraint-aware differentially private GAN for tabular data."""

__version__ = "0.1.0"

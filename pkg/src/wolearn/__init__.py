"""Overlap-weighted orthogonal meta-learning for treatment effects over time."""

__version__ = "0.1.0"

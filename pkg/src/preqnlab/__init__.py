"""Numerical laboratory for divergence in deep Q-learning."""

__version__ = "0.1.0"

"""Hierarchical models in deep and flat (white-Gaussian) coordinates."""

__version__ = "0.1.0"

"""Orthogonal dictionary recovery by Riemannian subgradient descent."""

__version__ = "0.1.0"

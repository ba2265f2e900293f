"""Multistage composite stochastic mirror descent for sparse recovery."""

__version__ = "0.1.0"

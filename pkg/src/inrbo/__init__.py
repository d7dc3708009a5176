"""Bayesian optimization of implicit neural representation configurations."""

__version__ = "0.1.0"

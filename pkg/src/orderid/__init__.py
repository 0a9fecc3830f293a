"""Posterior order identification for nested parametric families."""

__version__ = "0.1.0"

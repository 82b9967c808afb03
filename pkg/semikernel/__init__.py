"""Fundamental solutions and solvers for semielliptic operators."""

__version__ = "1.1.0"

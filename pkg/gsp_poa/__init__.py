"""Generalized Second Price auction: mechanism, equilibria and welfare loss."""

__version__ = "0.1.0"

"""Driven-dynamics laboratory for state-preparation protocols in finite quantum systems."""

__version__ = "0.1.0"

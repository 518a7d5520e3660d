"""Deterministic figure rendering for elastica experiment artifacts."""

__version__ = "0.1.0"

"""Detect stochastic inertia from a single deterministic trajectory."""

__version__ = "0.1.0"

"""Numerical laboratory for a zero-flux fluxonium operated as an erasure qubit."""

__version__ = "0.1.0"

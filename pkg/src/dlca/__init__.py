"""Continuous-measurement eavesdropping on BB84: simulation, classification and sweeps."""

__version__ = "0.1.0"

"""Continual federated learning simulator with orthogonally projected
aggregation, randomized subspace sketching, and simulated secure
aggregation."""

__version__ = "0.1.0"

"""Tier-based client selection for simulated federated learning."""

__version__ = "0.1.0"

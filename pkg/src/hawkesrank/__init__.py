"""Latent-rank network point processes for dominance interaction data."""

__version__ = "0.1.0"

"""Reward-directed conditional diffusion on subspace-structured data."""
__version__ = "0.1.0"

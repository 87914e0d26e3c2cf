"""Infinite-horizon ergodic coverage control with kernel mean embeddings."""
__version__ = "0.1.0"

"""Divide-and-Rule patch embeddings and cluster-based survival analysis."""

__version__ = "0.1.0"

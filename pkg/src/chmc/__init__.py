"""Coherent hierarchical multi-label classification with a max constraint layer and loss."""

__version__ = "0.1.0"

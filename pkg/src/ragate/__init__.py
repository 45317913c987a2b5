"""Uncertainty-gated adaptive retrieval for question answering."""

__version__ = "0.1.0"

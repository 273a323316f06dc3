"""Differentiable NFDM soliton link with a neural receiver."""

__version__ = "0.1.0"

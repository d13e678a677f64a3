"""Learned safety constraints from demonstrations and constraint-aware policy optimization on a text gridworld."""

__version__ = "0.1.0"

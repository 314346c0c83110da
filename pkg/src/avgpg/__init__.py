"""Epoch-based policy gradient for ergodic average-reward MDPs, with an exact tabular oracle."""

__version__ = "0.1.0"

"""Reinforcement-learned repair of typographic syntax errors in C-like
programs: token-stream environment, A3C training, and repair metrics."""

__version__ = "0.1.0"

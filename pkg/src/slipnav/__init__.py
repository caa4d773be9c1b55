"""Temporal-logic plus reinforcement-learning navigation for a SLIP hopping robot."""

__version__ = "0.1.0"

"""Rocket launching: co-training a light net with a deeper booster net."""

__version__ = "0.1.0"

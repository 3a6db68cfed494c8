"""Reward learning from limited supervision, with offline RL on top."""

__version__ = "0.1.0"

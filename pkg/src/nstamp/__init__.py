"""Neuro-symbolic task planning with vision/force cross-validation and
continual learning from self-generated correction labels."""

__version__ = "0.1.0"

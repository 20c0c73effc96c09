"""Fairness-aware traffic prediction with state-guided sensor sampling."""

__version__ = "0.1.0"

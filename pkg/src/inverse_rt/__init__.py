"""Inverse linear optimization for learning better constraint limits, with a
CVaR dose-planning model and synthetic phantoms to exercise it."""

__version__ = "0.1.0"

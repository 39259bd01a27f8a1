"""Simulation and analysis of dynamic runtime control for suboptimal max-weight schedulers."""

__version__ = "0.1.0"

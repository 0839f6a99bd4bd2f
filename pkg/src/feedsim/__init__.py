"""Simulation and estimation toolkit for feed exposure and sharing behaviour."""
__version__ = "0.1.0"

"""Granular raking simulation and perception for locating buried objects."""

__version__ = "0.1.0"

"""Simulation and analysis toolkit for shuttling trapped ions."""

__version__ = "0.1.0"

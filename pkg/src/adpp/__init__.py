"""Approximate drift-plus-penalty control for distributed decisions under non-stationary states."""

__version__ = "0.1.0"

"""Spatial divide-and-conquer counting toolkit."""

__version__ = "0.1.0"

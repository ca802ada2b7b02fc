"""Desk-scale query-propagation tracker with dynamic anchor queries."""

__version__ = "0.1.0"

"""Desk-scale IoT/CPS security testbed."""

__version__ = "0.1.0"

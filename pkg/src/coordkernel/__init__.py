"""Coordination kernel for simulated agent ecosystems."""

__version__ = "0.1.0"

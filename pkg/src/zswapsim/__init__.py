"""Trace-driven simulator for compressed memory swap on memory-constrained devices."""

__version__ = "0.1.0"

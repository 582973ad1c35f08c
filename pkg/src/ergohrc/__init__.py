"""Ergonomic task assessment and gesture-driven human-robot collaboration."""

__version__ = "0.1.0"

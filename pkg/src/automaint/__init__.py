"""Autonomic maintenance management for a simulated structured overlay and a
replicated store client."""

__version__ = "0.1.0"

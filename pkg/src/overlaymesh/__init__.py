"""Overlay cognitive radio capacity analysis for wireless mesh networks."""

__version__ = "0.1.0"

"""Merge two citation datasets into one deduplicated citation graph."""

__version__ = "0.1.0"

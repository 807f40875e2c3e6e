"""Acoustic embedding extraction for the avb harness."""

__version__ = "0.1.0"

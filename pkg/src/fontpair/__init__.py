"""Decide whether two glyph images of different letters come from the same font."""

__version__ = "0.1.0"

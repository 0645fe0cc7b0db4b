"""Predicate-driven tabletop scene layout with physical validation."""

__version__ = "0.1.0"

"""Representational geodesics: image sequences that are shortest paths in a representation space."""

__version__ = "0.1.0"

"""Stretched lattice polymers: enumeration, sampling and renewal structure."""

__version__ = "0.1.0"

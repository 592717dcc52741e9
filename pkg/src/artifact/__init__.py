"""Kac-Rice counting for the non-relaxational spherical p-spin model and the
real elliptic ensemble tools it relies on."""

__version__ = "0.1.0"

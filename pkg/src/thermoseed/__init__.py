"""Temporally consistent thermal image mapping and self-supervised loss stack."""

__version__ = "0.1.0"

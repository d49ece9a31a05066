"""Volumetric age/sex prediction toolkit."""

__version__ = "0.1.0"

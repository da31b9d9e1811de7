"""Spectrum-guided multi-scale state-space models."""

__version__ = "0.1.0"

"""Conditional-diffusion reconstruction of double-RIS cascaded channels."""

__version__ = "0.1.0"

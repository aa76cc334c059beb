"""Numerical laboratory for the complex anisotropic inverse conductivity problem on layered boxes."""

__version__ = "0.1.0"

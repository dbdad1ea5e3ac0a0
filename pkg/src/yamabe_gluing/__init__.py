"""Numerical gluing construction of singular constant scalar curvature metrics on punctured spheres."""

__version__ = "0.1.0"

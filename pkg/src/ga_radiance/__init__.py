"""Geometric-algebra radiance fields for indoor wireless channel prediction."""

__version__ = "0.1.0"

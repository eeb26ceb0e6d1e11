"""Numerical laboratory for pointwise gradient estimates of nonautonomous
parabolic evolution operators with unbounded coefficients."""

__version__ = "0.1.0"

"""Synthetic calibration benchmark: render planar targets, calibrate, and score the solvers."""

__version__ = "0.1.0"

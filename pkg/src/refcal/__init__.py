"""Refractive camera, housing and stereo calibration."""

__version__ = "0.1.0"

"""Sparse motion-field stereo visual odometry."""

__version__ = "0.1.0"

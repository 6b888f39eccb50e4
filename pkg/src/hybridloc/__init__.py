"""Cooperative localization from ranges, bearings and velocities via a convex relaxation."""

__version__ = "0.1.0"

"""Planar multi-vehicle simulator with V2V-aware cooperative collision avoidance."""

__version__ = "0.1.0"

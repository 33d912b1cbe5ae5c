"""Detect and repair floating-point errors without raising the working precision."""

__version__ = "0.1.0"

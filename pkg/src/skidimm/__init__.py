"""Traction-mode identification for skid-steer robots with an IMM filter bank."""

__version__ = "0.1.0"

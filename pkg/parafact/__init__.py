"""Morphisms, quotients and canonical forms of second-order parabolic equations."""

__version__ = "1.0.0"

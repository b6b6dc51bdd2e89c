"""Closed-loop raceline optimization with NURBS curves, CMA-ES and a learned constraint map."""

__version__ = "0.1.0"

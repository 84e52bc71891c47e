"""Viscous shocks of the generalized KdV-Burgers equation under periodic perturbation."""

__version__ = "0.1.0"

"""Numerical companion for the vanishing-viscosity limit from the Boltzmann equation to 2D Euler."""

__version__ = "0.1.0"

"""
cyclomass: cyclotron effective-mass reduction of strongly confined,
magnetized Schrödinger-Poisson systems.
"""

__version__ = "0.1.0"

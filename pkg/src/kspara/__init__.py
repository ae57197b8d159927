"""Spectral toolkit for the renormalized stochastic Keller-Segel equation on the 2-torus.

Fourier-side fields, dyadic blocks and paraproducts, noise and enhancement
diagrams, the shape-coefficient oracle, and mild and paracontrolled solvers.
"""

__version__ = "0.1.0"

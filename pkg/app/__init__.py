"""
Nonlocal Lab

A numerical laboratory for parabolic integro-differential equations
u_t - Iu = f with operators elliptic with respect to kernel classes
comparable to the fractional Laplacian. Solves Dirichlet problems with
exterior data, checks comparison and barrier properties, and measures
regularity exponents and operator norms.
"""

__version__ = "0.1.0"
__author__ = "Nonlocal Lab Team"
__description__ = "Numerical laboratory for parabolic nonlocal equations"

"""Numerical core: kernels, quadrature, evolution, barriers, regularity and metrics."""

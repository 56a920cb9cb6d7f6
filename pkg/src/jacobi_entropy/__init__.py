"""Generalized curvature of Jacobi curves and entropy bounds for Hamiltonian flows."""

__version__ = "0.1.0"

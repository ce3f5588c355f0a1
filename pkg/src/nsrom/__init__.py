"""Reduced-order and DEIM hyper-reduced solvers for the parameterized
steady Navier-Stokes driven cavity."""

__version__ = "0.1.0"

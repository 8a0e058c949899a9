"""Limit-periodic NLS toolkit: series, periodization, scaled-torus norms,
a split-step solver and the periodization-hierarchy convergence harness."""

__version__ = "0.1.0"

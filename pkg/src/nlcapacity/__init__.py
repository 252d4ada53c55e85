"""Nonlinear condenser capacities on graphs, operator tuples and cell sets."""

__version__ = "0.1.0"

"""Adaptive linear MPC with extremum-seeking model correction."""

__version__ = "0.1.0"

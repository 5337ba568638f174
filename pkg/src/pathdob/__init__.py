"""Discrete-time PD + disturbance-observer path-following toolbox."""

__version__ = "0.1.0"

"""Reachability-aware quadrotor planning and disturbance-compensated tracking."""

__version__ = "0.1.0"

"""LQR-guided Lyapunov actor-critic control of a nonlinear SDOF structure."""

__version__ = "0.1.0"

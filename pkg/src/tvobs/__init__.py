"""Time-varying high-gain observers and estimators for uncertain nonlinear systems."""

__version__ = "0.1.0"

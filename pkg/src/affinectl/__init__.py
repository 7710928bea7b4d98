"""Trajectory tracking for control-affine systems x' = R(x) + B(x) u."""

from .errors import AffineCtlError, NumericFailure
from .numerics import TimeGrid, Trajectory
from .systems import AffineSystem, Signal, builtin_system

__all__ = ["AffineCtlError", "NumericFailure", "TimeGrid", "Trajectory", "AffineSystem",
           "Signal", "builtin_system"]
__version__ = "0.1.0"

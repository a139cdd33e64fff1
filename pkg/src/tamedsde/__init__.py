"""Stopped-tamed Euler-Maruyama numerics with Lyapunov-based verification tools."""
from .analysis import ErrorReport, strong_error
from .models import SodeModel, make_model
from .rng import BrownianGrid, Partition, SeedSpec
from .schemes import SchemeKind, integrate

__all__ = [
    "BrownianGrid",
    "ErrorReport",
    "Partition",
    "SchemeKind",
    "SeedSpec",
    "SodeModel",
    "integrate",
    "make_model",
    "strong_error",
]

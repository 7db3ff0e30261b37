"""Mamba-2 SSD inference engine (C++ core)."""

from ._core import (
    BundleError,
    InputError,
    Model,
    ShapeError,
    hbu,
    mfu,
    segsum,
    sequential_ssm,
    ssd_forward,
)

__all__ = [
    "BundleError",
    "InputError",
    "Model",
    "ShapeError",
    "hbu",
    "mfu",
    "segsum",
    "sequential_ssm",
    "ssd_forward",
]

"""Simulation and analysis of 2D topological pumps in coupled waveguide arrays."""

from .errors import TPumpError
from .model import (
    HermitianOperator,
    LatticeSpec,
    PumpParams,
    PumpSchedule,
    build_1d_harper,
    build_2d_direct_sum,
    build_bloch,
    build_geometric_model,
    hopping_amplitude,
)

__all__ = [
    "HermitianOperator",
    "LatticeSpec",
    "PumpParams",
    "PumpSchedule",
    "TPumpError",
    "build_1d_harper",
    "build_2d_direct_sum",
    "build_bloch",
    "build_geometric_model",
    "hopping_amplitude",
]

__version__ = "0.1.0"

"""Bi-level coordination of automated vehicles at a non-signalized intersection.

High level: a centralized scheduler grants each crossing request a set of
space-time resource blocks (an entry time plus a feasible tunnel of cells).
Low level: a gradient-based B-spline refiner adjusts the in-zone trajectory
around unexpected obstacles while staying inside the granted tunnel.
"""

__version__ = "0.1.0"

from ._kernels import USING_COMPILED, implementation_name
from .geometry import IntersectionConfig, Maneuver, road_target, standard_path
from .grid import GridSpec, OccupancySet, disjoint, rasterize_footprint, trajectory_occupancy
from .vehicle import ControlInput, NoiseConfig, VehicleSpec, VehicleState, step

__all__ = [
    "USING_COMPILED",
    "implementation_name",
    "IntersectionConfig",
    "Maneuver",
    "road_target",
    "standard_path",
    "GridSpec",
    "OccupancySet",
    "disjoint",
    "rasterize_footprint",
    "trajectory_occupancy",
    "ControlInput",
    "NoiseConfig",
    "VehicleSpec",
    "VehicleState",
    "step",
]

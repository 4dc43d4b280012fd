import pytest

from crossplan.geometry import IntersectionConfig
from crossplan.grid import GridSpec
from crossplan.scheduler import TrajectoryLibrary
from crossplan.vehicle import VehicleSpec


@pytest.fixture(scope="session")
def config():
    return IntersectionConfig()


@pytest.fixture(scope="session")
def vspec():
    return VehicleSpec()


@pytest.fixture(scope="session")
def grid(config):
    return GridSpec.for_intersection(config)


@pytest.fixture(scope="session")
def library(config, vspec, grid):
    """Warmed maneuver library shared across the suite (build once)."""
    return TrajectoryLibrary(config, vspec, 8.0).warm(grid)

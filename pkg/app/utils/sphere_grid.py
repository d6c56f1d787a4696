"""
Latitude/longitude grid on the sphere.

Latitudes are cell centred and offset from the poles by half a cell, so
cos(theta) is strictly positive on every row. Longitude is periodic; latitude
indices outside the grid clamp to the boundary row.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .errors import GridError

EARTH_RADIUS = 6.371e6  # m
GRAVITY = 9.81  # m/s^2
EARTH_ROTATION = 7.292e-5  # rad/s

Index = Union[int, np.ndarray]


@dataclass(frozen=True)
class PhysicalConstants:
    a: float = EARTH_RADIUS
    g: float = GRAVITY
    omega: float = EARTH_ROTATION


@dataclass(frozen=True)
class SphereGrid:
    nlon: int
    nlat: int
    a: float = EARTH_RADIUS
    g: float = GRAVITY
    omega: float = EARTH_ROTATION
    dlambda: float = field(init=False)
    dtheta: float = field(init=False)
    theta: np.ndarray = field(init=False, repr=False, compare=False)
    lam: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        dlambda = 2.0 * math.pi / self.nlon
        dtheta = math.pi / self.nlat
        theta = -0.5 * math.pi + (np.arange(self.nlat) + 0.5) * dtheta
        lam = np.arange(self.nlon) * dlambda
        theta.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, 'dlambda', dlambda)
        object.__setattr__(self, 'dtheta', dtheta)
        object.__setattr__(self, 'theta', theta)
        object.__setattr__(self, 'lam', lam)

    @property
    def size(self) -> int:
        """Cells per field."""
        return self.nlon * self.nlat

    @property
    def state_size(self) -> int:
        return 3 * self.size

    @property
    def constants(self) -> PhysicalConstants:
        return PhysicalConstants(self.a, self.g, self.omega)

    def fits_stencil(self, p: int, q: int) -> bool:
        return self.nlon >= 2 * p + 1 and self.nlat >= 2 * q + 1


def build_grid(nlon: int, nlat: int, constants: Optional[PhysicalConstants] = None) -> SphereGrid:
    """Build a grid; nlon must be at least 3 and nlat at least 2."""
    if nlon < 3:
        raise GridError(f"nlon must be >= 3, got {nlon}")
    if nlat < 2:
        raise GridError(f"nlat must be >= 2, got {nlat}")
    constants = constants or PhysicalConstants()
    return SphereGrid(int(nlon), int(nlat), constants.a, constants.g, constants.omega)


def wrap_lon(i: Index, nlon: int) -> Index:
    if isinstance(i, np.ndarray):
        return np.mod(i, nlon)
    return int(i) % nlon


def clamp_lat(j: Index, nlat: int) -> Index:
    if isinstance(j, np.ndarray):
        return np.clip(j, 0, nlat - 1)
    return min(max(int(j), 0), nlat - 1)

"""
Shallow-water model on the sphere, discretised with the un-staggered
Turkel-Zwas stencil and advanced with forward Euler.

A model state is a flat float64 vector holding the u, v and h blocks one after
the other. Every block is row-major over (latitude, longitude), so cell (i, j)
lives at offset i + j * nlon inside its block and the block reshapes to a
(nlat, nlon) array indexed [j, i].

Metric factors: sigma_lon = 1 / (2 a dlambda), sigma_lat = 1 / (2 a dtheta).
In the height tendency the longitude differences carry sigma_lon and the
latitude differences carry sigma_lat; everything else follows the printed
stencil, including the alpha prefactor on the whole brace.
"""

import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import GridError, ParameterError, StateError
from .sphere_grid import SphereGrid, clamp_lat

log = logging.getLogger(__name__)

FIELDS = ('u', 'v', 'h')


class StencilVariant(Enum):
    """Which V stencil to use.

    ``CORRECTED`` only replaces the u differences in the meridional advection
    of v with v differences. The Coriolis bracket of both variants is the
    printed one: minus sign, paired with u. The continuous v equation it would
    be reconciled with also pairs the bracket with u, and the printed minus is
    the physically consistent sign, so neither is changed.
    """
    AS_PRINTED = "as-printed"
    CORRECTED = "corrected"


@dataclass
class StateVector:
    """(u, v, h) on the grid. Wraps ``data`` without copying it."""
    data: np.ndarray
    nlon: int
    nlat: int

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64).reshape(-1)
        if self.data.size != 3 * self.nlon * self.nlat:
            raise StateError(
                f"state has {self.data.size} entries, expected 3*{self.nlon}*{self.nlat}"
            )

    @classmethod
    def zeros(cls, grid: SphereGrid) -> 'StateVector':
        return cls(np.zeros(grid.state_size), grid.nlon, grid.nlat)

    @classmethod
    def from_fields(cls, u: np.ndarray, v: np.ndarray, h: np.ndarray) -> 'StateVector':
        u = np.asarray(u, dtype=np.float64)
        nlat, nlon = u.shape
        data = np.concatenate([u.ravel(), np.asarray(v, dtype=np.float64).ravel(),
                               np.asarray(h, dtype=np.float64).ravel()])
        return cls(data, nlon, nlat)

    @property
    def block_size(self) -> int:
        return self.nlon * self.nlat

    def field(self, name: str) -> np.ndarray:
        if name not in FIELDS:
            raise StateError(f"unknown field {name!r}, expected one of {FIELDS}")
        k = FIELDS.index(name)
        n = self.block_size
        return self.data[k * n:(k + 1) * n].reshape(self.nlat, self.nlon)

    @property
    def u(self) -> np.ndarray:
        return self.field('u')

    @property
    def v(self) -> np.ndarray:
        return self.field('v')

    @property
    def h(self) -> np.ndarray:
        return self.field('h')

    def like(self, data: np.ndarray) -> 'StateVector':
        return StateVector(data, self.nlon, self.nlat)

    def copy(self) -> 'StateVector':
        return StateVector(self.data.copy(), self.nlon, self.nlat)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.data)))

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))


@dataclass(frozen=True)
class ModelParams:
    dt: float = 50.0
    alpha: float = 1.0 / 3.0
    p: int = 4
    q: int = 2
    msteps: int = 30
    variant: StencilVariant = StencilVariant.AS_PRINTED

    def __post_init__(self):
        # dt = 0 is accepted and makes every step the identity
        if not (self.dt >= 0 and math.isfinite(self.dt)):
            raise ParameterError(f"dt must be finite and >= 0, got {self.dt}")
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.p < 1 or self.q < 1:
            raise ParameterError(f"stencil widths must be >= 1, got p={self.p} q={self.q}")
        if self.msteps < 0:
            raise ParameterError(f"msteps must be >= 0, got {self.msteps}")

    def with_steps(self, msteps: int) -> 'ModelParams':
        return replace(self, msteps=msteps)

    def with_dt(self, dt: float) -> 'ModelParams':
        return replace(self, dt=dt)


@dataclass(frozen=True)
class FieldParams:
    h_mean: float = 5000.0  # m
    h_std: float = 10.0  # m
    n_modes: Optional[int] = None  # defaults to nlat // 2


class TurkelZwasStencil:
    """Shift, difference and averaging operators of the scheme on one grid.

    All operators act on (nlat, nlon) arrays. ``*_T`` methods are the exact
    transposes used by the adjoint.
    """

    def __init__(self, grid: SphereGrid, p: int, q: int, alpha: float):
        if not grid.fits_stencil(p, q):
            raise GridError(
                f"grid {grid.nlon}x{grid.nlat} too small for stencil p={p} q={q} "
                f"(needs nlon >= {2 * p + 1}, nlat >= {2 * q + 1})"
            )
        self.nlon = grid.nlon
        self.nlat = grid.nlat
        self.p = p
        self.q = q
        self.alpha = alpha
        self.g = grid.g

        theta = grid.theta[:, None]
        self.cos = np.cos(theta)
        self.invc = 1.0 / self.cos
        self.tn = np.tan(theta) / grid.a
        self.fc = 2.0 * grid.omega * np.sin(theta)
        self.sig_lon = 1.0 / (2.0 * grid.a * grid.dlambda)
        self.sig_lat = 1.0 / (2.0 * grid.a * grid.dtheta)

        rows = np.arange(self.nlat)
        self._rows: Dict[int, np.ndarray] = {
            dj: clamp_lat(rows + dj, self.nlat) for dj in {1, -1, q, -q}
        }

    def shift(self, f: np.ndarray, di: int = 0, dj: int = 0) -> np.ndarray:
        """(S f)[j, i] = f[clamp(j + dj), wrap(i + di)]."""
        if dj:
            f = f[self._rows[dj]]
        if di:
            f = np.roll(f, -di, axis=1)
        return f

    def shift_T(self, f: np.ndarray, di: int = 0, dj: int = 0) -> np.ndarray:
        if di:
            f = np.roll(f, di, axis=1)
        if dj:
            out = np.zeros_like(f)
            np.add.at(out, self._rows[dj], f)
            f = out
        return f

    def dlon(self, f: np.ndarray, k: int) -> np.ndarray:
        return self.shift(f, k) - self.shift(f, -k)

    def dlon_T(self, f: np.ndarray, k: int) -> np.ndarray:
        return self.shift_T(f, k) - self.shift_T(f, -k)

    def dlat(self, f: np.ndarray, k: int) -> np.ndarray:
        return self.shift(f, 0, k) - self.shift(f, 0, -k)

    def dlat_T(self, f: np.ndarray, k: int) -> np.ndarray:
        return self.shift_T(f, 0, k) - self.shift_T(f, 0, -k)

    def avg_lon(self, f: np.ndarray) -> np.ndarray:
        a = self.alpha
        return (1.0 - a) * f + 0.5 * a * (self.shift(f, self.p) + self.shift(f, -self.p))

    def avg_lon_T(self, f: np.ndarray) -> np.ndarray:
        a = self.alpha
        return (1.0 - a) * f + 0.5 * a * (self.shift_T(f, self.p) + self.shift_T(f, -self.p))

    def avg_lat(self, f: np.ndarray) -> np.ndarray:
        a = self.alpha
        return (1.0 - a) * f + 0.5 * a * (self.shift(f, 0, self.q) + self.shift(f, 0, -self.q))

    def avg_lat_T(self, f: np.ndarray) -> np.ndarray:
        a = self.alpha
        return (1.0 - a) * f + 0.5 * a * (self.shift_T(f, 0, self.q) + self.shift_T(f, 0, -self.q))


@lru_cache(maxsize=64)
def stencil_for(grid: SphereGrid, p: int, q: int, alpha: float) -> TurkelZwasStencil:
    return TurkelZwasStencil(grid, p, q, alpha)


def split_fields(x: np.ndarray, nlon: int, nlat: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = nlon * nlat
    return (x[:n].reshape(nlat, nlon), x[n:2 * n].reshape(nlat, nlon),
            x[2 * n:].reshape(nlat, nlon))


def join_fields(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    return np.concatenate([a.ravel(), b.ravel(), c.ravel()])


def as_array(x, grid: SphereGrid) -> np.ndarray:
    """Flat float64 view of a state, validated against the grid."""
    if isinstance(x, StateVector):
        if (x.nlon, x.nlat) != (grid.nlon, grid.nlat):
            raise StateError(
                f"state is {x.nlon}x{x.nlat}, grid is {grid.nlon}x{grid.nlat}"
            )
        return x.data
    arr = np.asarray(x, dtype=np.float64).reshape(-1)
    if arr.size != grid.state_size:
        raise StateError(f"state has {arr.size} entries, expected {grid.state_size}")
    return arr


def check_finite(x: np.ndarray, what: str = "state"):
    if not np.all(np.isfinite(x)):
        raise StateError(f"{what} contains non-finite entries")


def rhs_fields(u, v, h, st: TurkelZwasStencil, variant: StencilVariant):
    """Tendencies (U, V, H) of the semi-discrete system."""
    sl, sa = st.sig_lon, st.sig_lat
    p, q, g = st.p, st.q, st.g
    coriolis = st.fc + st.tn * u

    U = (-sl * st.invc * u * st.dlon(u, 1)
         - sa * v * st.dlat(u, 1)
         - sl * (g / p) * st.invc * st.dlon(h, p)
         + 2.0 * st.avg_lon(coriolis * v))

    w = v if variant is StencilVariant.CORRECTED else u
    V = (-sl * st.invc * u * st.dlon(v, 1)
         - sa * v * st.dlat(w, 1)
         - sa * (g / q) * st.dlat(h, q)
         - 2.0 * st.avg_lat(coriolis * u))

    H = -st.alpha * (sl * st.invc * u * st.dlon(h, 1)
                     + sa * v * st.dlat(h, 1)
                     + (sl / p) * st.invc * h * st.avg_lat(st.dlon(u, p))
                     + (sa / q) * st.avg_lon(st.dlat(st.cos * v, q)))
    return U, V, H


def _resolve(grid: SphereGrid, params: ModelParams, variant: Optional[StencilVariant]):
    st = stencil_for(grid, params.p, params.q, params.alpha)
    return st, (variant or params.variant)


def rhs_array(x: np.ndarray, st: TurkelZwasStencil, variant: StencilVariant) -> np.ndarray:
    u, v, h = split_fields(x, st.nlon, st.nlat)
    return join_fields(*rhs_fields(u, v, h, st, variant))


def step_array(x: np.ndarray, st: TurkelZwasStencil, dt: float,
               variant: StencilVariant) -> np.ndarray:
    check_finite(x)
    return x + dt * rhs_array(x, st, variant)


def rhs(state, grid: SphereGrid, params: ModelParams,
        variant: Optional[StencilVariant] = None) -> StateVector:
    """Tendency of the semi-discrete system, in per-second units."""
    st, variant = _resolve(grid, params, variant)
    x = as_array(state, grid)
    check_finite(x)
    return StateVector(rhs_array(x, st, variant), grid.nlon, grid.nlat)


def step(state, grid: SphereGrid, params: ModelParams,
         variant: Optional[StencilVariant] = None) -> StateVector:
    """One forward-Euler application of the model."""
    st, variant = _resolve(grid, params, variant)
    x = as_array(state, grid)
    return StateVector(step_array(x, st, params.dt, variant), grid.nlon, grid.nlat)


def trajectory(x0, grid: SphereGrid, params: ModelParams, nsteps: Optional[int] = None,
               variant: Optional[StencilVariant] = None) -> List[np.ndarray]:
    """States 0..nsteps of the run started at x0 (nsteps defaults to params.msteps)."""
    st, variant = _resolve(grid, params, variant)
    nsteps = params.msteps if nsteps is None else nsteps
    x = as_array(x0, grid)
    check_finite(x)
    states = [x.copy()]
    for _ in range(nsteps):
        x = step_array(x, st, params.dt, variant)
        states.append(x)
    return states


def integrate(x0, grid: SphereGrid, params: ModelParams,
              variant: Optional[StencilVariant] = None) -> StateVector:
    """params.msteps compositions of ``step``; msteps = 0 returns a copy of x0."""
    st, variant = _resolve(grid, params, variant)
    x = as_array(x0, grid).copy()
    check_finite(x)
    for _ in range(params.msteps):
        x = step_array(x, st, params.dt, variant)
    return StateVector(x, grid.nlon, grid.nlat)


def relative_drift(x0, grid: SphereGrid, params: ModelParams,
                   variant: Optional[StencilVariant] = None) -> float:
    """||M^msteps(x0) - x0|| / ||x0||."""
    x = as_array(x0, grid)
    xn = integrate(x, grid, params, variant).data
    return float(np.linalg.norm(xn - x) / np.linalg.norm(x))


def synth_initial(seed: int, grid: SphereGrid,
                  field_params: Optional[FieldParams] = None) -> StateVector:
    """Resting fluid with a random height anomaly.

    The anomaly is a sum of random-phase modes with zonal wavenumber 0..2 and
    meridional wavenumber 1..4, Gaussian amplitudes weighted by 1/(1+m)^2 and a
    cos^2 envelope on non-zonal modes. It is centred and scaled to exactly
    ``h_std``.
    """
    fp = field_params or FieldParams()
    rng = np.random.Generator(np.random.PCG64(seed))
    n_modes = fp.n_modes or max(1, grid.nlat // 2)

    theta = grid.theta[:, None]
    lam = grid.lam[None, :]
    eta = np.zeros((grid.nlat, grid.nlon))
    for _ in range(n_modes):
        m = int(rng.integers(0, 3))
        n = int(rng.integers(1, 5))
        amp = rng.standard_normal()
        phi_lon, phi_lat = rng.uniform(0.0, 2.0 * math.pi, size=2)
        envelope = 1.0 if m == 0 else np.cos(theta) ** 2
        eta += (amp / (1.0 + m) ** 2) * envelope * np.cos(m * lam + phi_lon) \
            * np.cos(n * (theta + 0.5 * math.pi) + phi_lat)

    eta -= eta.mean()
    std = eta.std()
    if std > 0:
        eta *= fp.h_std / std

    zeros = np.zeros((grid.nlat, grid.nlon))
    log.debug("synth_initial seed=%s modes=%s", seed, n_modes)
    return StateVector.from_fields(zeros, zeros, fp.h_mean + eta)

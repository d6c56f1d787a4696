"""
Tangent-linear and adjoint operators of the forward-Euler Turkel-Zwas step.

Both are derived by hand from ``swe_model.rhs_fields`` and applied matrix
free: tlm_step(b, d) = d + dt J(b) d and adjoint_step(b, y) = y + dt J(b)^T y,
where J is the exact Jacobian of the tendency. Windows chain these over a
stored nonlinear trajectory.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .sphere_grid import SphereGrid
from .swe_model import (
    ModelParams,
    StateVector,
    StencilVariant,
    TurkelZwasStencil,
    as_array,
    check_finite,
    join_fields,
    split_fields,
    stencil_for,
    step_array,
    trajectory,
)

log = logging.getLogger(__name__)


def tlm_fields(u, v, h, du, dv, dh, st: TurkelZwasStencil, variant: StencilVariant):
    sl, sa = st.sig_lon, st.sig_lat
    p, q, g = st.p, st.q, st.g
    coriolis = st.fc + st.tn * u

    dU = (-sl * st.invc * (du * st.dlon(u, 1) + u * st.dlon(du, 1))
          - sa * (dv * st.dlat(u, 1) + v * st.dlat(du, 1))
          - sl * (g / p) * st.invc * st.dlon(dh, p)
          + 2.0 * st.avg_lon(st.tn * du * v + coriolis * dv))

    if variant is StencilVariant.CORRECTED:
        w, dw = v, dv
    else:
        w, dw = u, du
    dV = (-sl * st.invc * (du * st.dlon(v, 1) + u * st.dlon(dv, 1))
          - sa * (dv * st.dlat(w, 1) + v * st.dlat(dw, 1))
          - sa * (g / q) * st.dlat(dh, q)
          - 2.0 * st.avg_lat((st.fc + 2.0 * st.tn * u) * du))

    dH = -st.alpha * (sl * st.invc * (du * st.dlon(h, 1) + u * st.dlon(dh, 1))
                      + sa * (dv * st.dlat(h, 1) + v * st.dlat(dh, 1))
                      + (sl / p) * st.invc * (dh * st.avg_lat(st.dlon(u, p))
                                              + h * st.avg_lat(st.dlon(du, p)))
                      + (sa / q) * st.avg_lon(st.dlat(st.cos * dv, q)))
    return dU, dV, dH


def adjoint_fields(u, v, h, Ub, Vb, Hb, st: TurkelZwasStencil, variant: StencilVariant):
    sl, sa = st.sig_lon, st.sig_lat
    p, q, g = st.p, st.q, st.g
    ub = np.zeros_like(u)
    vb = np.zeros_like(v)
    hb = np.zeros_like(h)

    # zonal momentum
    ub += -sl * st.invc * st.dlon(u, 1) * Ub
    ub += st.dlon_T(-sl * st.invc * u * Ub, 1)
    vb += -sa * st.dlat(u, 1) * Ub
    ub += st.dlat_T(-sa * v * Ub, 1)
    hb += st.dlon_T(-sl * (g / p) * st.invc * Ub, p)
    pb = st.avg_lon_T(2.0 * Ub)
    ub += st.tn * v * pb
    vb += (st.fc + st.tn * u) * pb

    # meridional momentum
    ub += -sl * st.invc * st.dlon(v, 1) * Vb
    vb += st.dlon_T(-sl * st.invc * u * Vb, 1)
    w = v if variant is StencilVariant.CORRECTED else u
    vb += -sa * st.dlat(w, 1) * Vb
    wb = st.dlat_T(-sa * v * Vb, 1)
    if variant is StencilVariant.CORRECTED:
        vb += wb
    else:
        ub += wb
    hb += st.dlat_T(-sa * (g / q) * Vb, q)
    qb = st.avg_lat_T(-2.0 * Vb)
    ub += (st.fc + 2.0 * st.tn * u) * qb

    # height
    hh = -st.alpha * Hb
    ub += sl * st.invc * st.dlon(h, 1) * hh
    hb += st.dlon_T(sl * st.invc * u * hh, 1)
    vb += sa * st.dlat(h, 1) * hh
    hb += st.dlat_T(sa * v * hh, 1)
    hb += (sl / p) * st.invc * st.avg_lat(st.dlon(u, p)) * hh
    ub += st.dlon_T(st.avg_lat_T((sl / p) * st.invc * h * hh), p)
    vb += st.cos * st.dlat_T(st.avg_lon_T((sa / q) * hh), q)
    return ub, vb, hb


def tlm_step_array(base: np.ndarray, delta: np.ndarray, st: TurkelZwasStencil, dt: float,
                   variant: StencilVariant) -> np.ndarray:
    fields = split_fields(base, st.nlon, st.nlat) + split_fields(delta, st.nlon, st.nlat)
    return delta + dt * join_fields(*tlm_fields(*fields, st, variant))


def adjoint_step_array(base: np.ndarray, ybar: np.ndarray, st: TurkelZwasStencil, dt: float,
                       variant: StencilVariant) -> np.ndarray:
    fields = split_fields(base, st.nlon, st.nlat) + split_fields(ybar, st.nlon, st.nlat)
    return ybar + dt * join_fields(*adjoint_fields(*fields, st, variant))


def _linear_inputs(base, other, grid: SphereGrid, what: str):
    b = as_array(base, grid)
    o = as_array(other, grid)
    check_finite(b, "base state")
    check_finite(o, what)
    return b, o


def tlm_step(base, delta, grid: SphereGrid, params: ModelParams,
             variant: Optional[StencilVariant] = None) -> StateVector:
    b, d = _linear_inputs(base, delta, grid, "perturbation")
    st = stencil_for(grid, params.p, params.q, params.alpha)
    out = tlm_step_array(b, d, st, params.dt, variant or params.variant)
    return StateVector(out, grid.nlon, grid.nlat)


def adjoint_step(base, ybar, grid: SphereGrid, params: ModelParams,
                 variant: Optional[StencilVariant] = None) -> StateVector:
    b, y = _linear_inputs(base, ybar, grid, "adjoint input")
    st = stencil_for(grid, params.p, params.q, params.alpha)
    out = adjoint_step_array(b, y, st, params.dt, variant or params.variant)
    return StateVector(out, grid.nlon, grid.nlat)


@dataclass
class LinearizationPoint:
    """Nonlinear states at steps 0..n-1 of a run; one entry per linearized step."""
    trajectory: List[np.ndarray]
    grid: SphereGrid
    params: ModelParams
    variant: StencilVariant = StencilVariant.AS_PRINTED

    def __len__(self) -> int:
        return len(self.trajectory)

    @property
    def stencil(self) -> TurkelZwasStencil:
        return stencil_for(self.grid, self.params.p, self.params.q, self.params.alpha)

    def window(self, start: int, stop: int) -> 'LinearizationPoint':
        return LinearizationPoint(self.trajectory[start:stop], self.grid, self.params, self.variant)


def linearize(x, grid: SphereGrid, params: ModelParams, nsteps: Optional[int] = None,
              variant: Optional[StencilVariant] = None) -> LinearizationPoint:
    variant = variant or params.variant
    nsteps = params.msteps if nsteps is None else nsteps
    states = trajectory(x, grid, params, nsteps, variant)
    return LinearizationPoint(states[:nsteps], grid, params, variant)


def tlm_window_array(lin: LinearizationPoint, delta: np.ndarray) -> np.ndarray:
    st = lin.stencil
    d = delta
    for base in lin.trajectory:
        d = tlm_step_array(base, d, st, lin.params.dt, lin.variant)
    return d


def adjoint_window_array(lin: LinearizationPoint, ybar: np.ndarray) -> np.ndarray:
    st = lin.stencil
    y = ybar
    for base in reversed(lin.trajectory):
        y = adjoint_step_array(base, y, st, lin.params.dt, lin.variant)
    return y


def tlm_window(lin: LinearizationPoint, delta) -> StateVector:
    d = as_array(delta, lin.grid)
    check_finite(d, "perturbation")
    return StateVector(tlm_window_array(lin, d.copy()), lin.grid.nlon, lin.grid.nlat)


def adjoint_window(lin: LinearizationPoint, ybar) -> StateVector:
    y = as_array(ybar, lin.grid)
    check_finite(y, "adjoint input")
    return StateVector(adjoint_window_array(lin, y.copy()), lin.grid.nlon, lin.grid.nlat)


# -- verification -------------------------------------------------------------

@dataclass
class TaylorReport:
    epsilons: List[float]
    residuals: List[float]
    orders: List[float] = field(default_factory=list)

    @property
    def min_order(self) -> float:
        return min(self.orders) if self.orders else math.nan


def random_state(rng: np.random.Generator, grid: SphereGrid, h_mean: float = 5000.0,
                 scale: float = 10.0) -> np.ndarray:
    """Random base state: velocities ~ N(0, scale), heights ~ h_mean + N(0, scale)."""
    x = scale * rng.standard_normal(grid.state_size)
    x[2 * grid.size:] += h_mean
    return x


def dot_product_test(grid: SphereGrid, params: ModelParams, nsteps: int, seed: int = 0,
                     pairs: int = 20, variant: Optional[StencilVariant] = None) -> float:
    """Worst |<M d, y> - <d, M* y>| / (||M d|| ||y||) over random pairs."""
    rng = np.random.Generator(np.random.PCG64(seed))
    lin = linearize(random_state(rng, grid), grid, params, nsteps, variant)
    worst = 0.0
    for _ in range(pairs):
        d = rng.standard_normal(grid.state_size)
        y = rng.standard_normal(grid.state_size)
        md = tlm_window_array(lin, d)
        mty = adjoint_window_array(lin, y)
        denom = np.linalg.norm(md) * np.linalg.norm(y)
        worst = max(worst, abs(md @ y - d @ mty) / denom)
    log.info("dot-product test: steps=%d pairs=%d worst=%.3e", nsteps, pairs, worst)
    return float(worst)


def taylor_test(grid: SphereGrid, params: ModelParams, seed: int = 0,
                epsilons: Sequence[float] = (1e-2, 1e-3, 1e-4, 1e-5),
                variant: Optional[StencilVariant] = None,
                perturbation_scale: float = 1e3) -> TaylorReport:
    """Remainder ||step(b + e d) - step(b) - e tlm_step(b, d)|| for decreasing e."""
    variant = variant or params.variant
    rng = np.random.Generator(np.random.PCG64(seed))
    st = stencil_for(grid, params.p, params.q, params.alpha)
    base = random_state(rng, grid)
    d = perturbation_scale * rng.standard_normal(grid.state_size)
    f0 = step_array(base, st, params.dt, variant)
    jd = tlm_step_array(base, d, st, params.dt, variant)

    residuals = []
    for eps in epsilons:
        fe = step_array(base + eps * d, st, params.dt, variant)
        residuals.append(float(np.linalg.norm(fe - f0 - eps * jd)))
    orders = [
        math.log(r0 / r1) / math.log(e0 / e1)
        for (r0, r1, e0, e1) in zip(residuals, residuals[1:], epsilons, epsilons[1:])
        if r0 > 0 and r1 > 0
    ]
    report = TaylorReport(list(epsilons), residuals, orders)
    log.info("taylor test: residuals=%s orders=%s", residuals, orders)
    return report

"""
The 4D-Var functional

    J(x) = (x - x_b)^T B^+ (x - x_b)
           + lam * sum_k (H M^(k s)(x) - v_k)^T R^-1 (H M^(k s)(x) - v_k)

and its gradient through the adjoint model. ``s`` is the number of model
steps between consecutive observations (1 in the twin experiments; 0 turns J
into a plain quadratic).
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .error_models import ObsErrWeights, ObsOperator, TsvdFailure, TsvdPrecon, apply_Binv
from .errors import ParameterError, PreconditionerError
from .obs_factory import ObservationSet
from .sphere_grid import SphereGrid
from .swe_model import ModelParams, StateVector, StencilVariant, as_array, trajectory
from .tlm_adjoint import LinearizationPoint, adjoint_window_array

log = logging.getLogger(__name__)


@dataclass
class AssimilationSetup:
    x_b: StateVector
    obs: ObservationSet
    H: ObsOperator
    rinv: ObsErrWeights
    precon: TsvdPrecon
    grid: SphereGrid
    params: ModelParams
    lam: float = 1.0
    steps_per_obs: int = 1

    def __post_init__(self):
        if isinstance(self.precon, TsvdFailure) or not self.precon.usable:
            raise PreconditionerError(
                f"TSVD preconditioner unusable ({getattr(self.precon, 'reason', 'rank')})"
            )
        if len(self.obs) < 1:
            raise ParameterError("at least one observation is required")
        if self.lam < 0:
            raise ParameterError(f"lambda must be >= 0, got {self.lam}")
        if self.steps_per_obs < 0:
            raise ParameterError(f"steps_per_obs must be >= 0, got {self.steps_per_obs}")

    @property
    def nt_obs(self) -> int:
        return len(self.obs)

    @property
    def variant(self) -> StencilVariant:
        return self.params.variant

    def obs_step(self, k: int) -> int:
        return k * self.steps_per_obs


@dataclass
class CostBreakdown:
    background: float
    observation: float  # before the lam factor
    total: float


def _run(x: np.ndarray, setup: AssimilationSetup, last_obs: int) -> List[np.ndarray]:
    return trajectory(x, setup.grid, setup.params, setup.obs_step(last_obs), setup.variant)


def _obs_indices(setup: AssimilationSetup, indices: Optional[Sequence[int]]) -> List[int]:
    return list(range(setup.nt_obs)) if indices is None else list(indices)


def observation_part(x: np.ndarray, setup: AssimilationSetup,
                     indices: Optional[Sequence[int]] = None,
                     select: Optional[np.ndarray] = None,
                     with_grad: bool = True) -> Tuple[float, Optional[np.ndarray]]:
    """Observation misfit summed over ``indices`` and its gradient.

    ``select`` restricts the misfit to a subset of state entries (0/1 weights).
    Each observation time gets its own reverse sweep.
    """
    idx = _obs_indices(setup, indices)
    if not idx:
        return 0.0, (np.zeros_like(x) if with_grad else None)
    states = _run(x, setup, max(idx))
    weights = setup.H.mask * setup.rinv.rinv
    if select is not None:
        weights = weights * select
    lin = LinearizationPoint(states[:-1], setup.grid, setup.params, setup.variant)

    value = 0.0
    grad = np.zeros_like(x) if with_grad else None
    for k in idx:
        n = setup.obs_step(k)
        r = setup.H.apply(states[n]) - setup.obs.obs[k]
        wr = weights * r
        value += float(r @ wr)
        if with_grad:
            grad += adjoint_window_array(lin.window(0, n), 2.0 * wr)
    return value, grad


def background_part(x: np.ndarray, setup: AssimilationSetup,
                    with_grad: bool = True) -> Tuple[float, Optional[np.ndarray]]:
    d = x - setup.x_b.data
    bd = apply_Binv(setup.precon, d)
    return float(d @ bd), (2.0 * bd if with_grad else None)


def cost_and_grad(x, setup: AssimilationSetup) -> Tuple[float, np.ndarray]:
    x = as_array(x, setup.grid)
    jb, gb = background_part(x, setup)
    jo, go = observation_part(x, setup)
    return jb + setup.lam * jo, gb + setup.lam * go


def cost_components(x, setup: AssimilationSetup) -> CostBreakdown:
    x = as_array(x, setup.grid)
    jb, _ = background_part(x, setup, with_grad=False)
    jo, _ = observation_part(x, setup, with_grad=False)
    return CostBreakdown(jb, jo, jb + setup.lam * jo)


def eval_cost(x, setup: AssimilationSetup) -> float:
    return cost_components(x, setup).total


def eval_grad(x, setup: AssimilationSetup) -> StateVector:
    _, g = cost_and_grad(x, setup)
    return StateVector(g, setup.grid.nlon, setup.grid.nlat)

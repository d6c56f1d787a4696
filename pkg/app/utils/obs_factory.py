"""
Twin-experiment data: the truth run from x0, the assimilation window and the
synthetic observations of Problems 1-4.

The window covering nt_obs observations ends at model step ``total_steps``
(30 by default) and starts at step total_steps - nt_obs + 1. The background is
the truth at the first observation time.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np

from .error_models import Problem, as_problem, build_obs_operator
from .errors import ParameterError
from .sphere_grid import SphereGrid
from .swe_model import ModelParams, StateVector, trajectory

log = logging.getLogger(__name__)

TOTAL_STEPS = 30
NOISE_STD = 0.01

Number = Union[float, np.ndarray]


@dataclass(frozen=True)
class AssimilationWindow:
    nt_obs: int
    dt: float
    total_steps: int = TOTAL_STEPS

    def __post_init__(self):
        if not 1 <= self.nt_obs <= self.total_steps:
            raise ParameterError(
                f"nt_obs must lie in [1, {self.total_steps}], got {self.nt_obs}"
            )

    @property
    def base_step(self) -> int:
        return self.total_steps - self.nt_obs + 1

    @property
    def obs_steps(self) -> List[int]:
        return list(range(self.base_step, self.total_steps + 1))

    @property
    def interval(self) -> Tuple[float, float]:
        return self.base_step * self.dt, self.total_steps * self.dt


@dataclass
class ObservationSet:
    obs: List[np.ndarray]
    problem: Problem
    seed: int

    def __len__(self) -> int:
        return len(self.obs)

    @property
    def nt_obs(self) -> int:
        return len(self.obs)


def new_rng(seed: int) -> np.random.Generator:
    """PCG64 stream; normals come from numpy's ziggurat sampler."""
    return np.random.Generator(np.random.PCG64(seed))


def round_to_decimals(x: Number, d: int) -> Number:
    """Half-away-from-zero rounding at d decimal places."""
    scale = 10.0 ** d
    out = np.sign(x) * np.floor(np.abs(x) * scale + 0.5) / scale
    # keeps -0.0 out of the results
    out = out + 0.0
    return float(out) if np.ndim(out) == 0 else out


def order_of_magnitude(x: Number) -> Number:
    """10^floor(log10|x|), with 0 mapped to 0."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    out = np.zeros_like(ax)
    nz = ax > 0
    out[nz] = 10.0 ** np.floor(np.log10(ax[nz]))
    return float(out) if out.ndim == 0 else out


def make_observation(truth, problem, mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Observation vector of one truth state.

    Sparse problems draw one normal per on-mask entry in linear index order.
    """
    problem = as_problem(problem)
    t = truth.data if isinstance(truth, StateVector) else np.asarray(truth, dtype=np.float64)
    if problem.decimals is not None:
        return round_to_decimals(t, problem.decimals)

    on = np.flatnonzero(mask)
    noise = rng.standard_normal(on.size)
    out = np.zeros_like(t)
    if problem is Problem.SPARSE_NOISE:
        out[on] = t[on] + NOISE_STD * noise
    else:
        out[on] = t[on] + NOISE_STD * order_of_magnitude(t[on]) * noise
    return out


def generate_window_data(x0, grid: SphereGrid, params: ModelParams, nt_obs: int, problem,
                         seed: int, total_steps: int = TOTAL_STEPS
                         ) -> Tuple[StateVector, ObservationSet]:
    """Background and observations for the window of nt_obs observations."""
    problem = as_problem(problem)
    window = AssimilationWindow(nt_obs, params.dt, total_steps)
    truth = trajectory(x0, grid, params, total_steps)
    mask = build_obs_operator(problem, grid).mask
    rng = new_rng(seed)

    x_b = StateVector(truth[window.base_step].copy(), grid.nlon, grid.nlat)
    obs = [make_observation(truth[s], problem, mask, rng) for s in window.obs_steps]
    log.info("window data: problem=%d dt=%g nt_obs=%d steps %d..%d seed=%d",
             problem, params.dt, nt_obs, window.base_step, total_steps, seed)
    return x_b, ObservationSet(obs, problem, seed)

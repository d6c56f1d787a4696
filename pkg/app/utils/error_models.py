"""
Error models: rank-one background covariance with its truncated-SVD
pseudo-inverse, diagonal observation-error weights and 0/1 observation masks.
"""

import logging
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Union

import numpy as np

from .errors import PreconditionerError, ProblemError, StateError
from .sphere_grid import SphereGrid
from .swe_model import StateVector

log = logging.getLogger(__name__)

DEFAULT_REL_TOL = 1e-14
OBS_STEP = 5
U_BLOCK_WEIGHT = 1e-6


class Problem(IntEnum):
    """Observation protocols of the twin experiments."""
    ROUNDED_2 = 1   # full state rounded to 2 decimals
    SPARSE_NOISE = 2  # every 5th entry, absolute noise 0.01
    ROUNDED_1 = 3   # full state rounded to 1 decimal
    SPARSE_SCALED_NOISE = 4  # every 5th entry, noise scaled by order of magnitude

    @property
    def sparse(self) -> bool:
        return self in (Problem.SPARSE_NOISE, Problem.SPARSE_SCALED_NOISE)

    @property
    def decimals(self) -> Optional[int]:
        return {Problem.ROUNDED_2: 2, Problem.ROUNDED_1: 1}.get(self)


def as_problem(problem: Union[int, Problem]) -> Problem:
    try:
        return Problem(int(problem))
    except (TypeError, ValueError):
        raise ProblemError(f"unknown problem id {problem!r}, expected 1, 2, 3 or 4") from None


def _vector(x) -> np.ndarray:
    if isinstance(x, StateVector):
        return x.data
    return np.asarray(x, dtype=np.float64).reshape(-1)


@dataclass
class BackgroundCov:
    """B = e e^T held implicitly through the anomaly e = x_b - nu."""
    err_vector: np.ndarray
    nu: float

    @property
    def degenerate(self) -> bool:
        return not np.any(self.err_vector)

    def apply(self, y: np.ndarray) -> np.ndarray:
        e = self.err_vector
        return e * (e @ y)


def build_background_cov(x_b) -> BackgroundCov:
    x = _vector(x_b)
    if not np.all(np.isfinite(x)):
        raise StateError("background contains non-finite entries")
    nu = float(np.sum(x) / x.size)
    return BackgroundCov(x - nu, nu)


@dataclass
class TsvdPrecon:
    singular_values: np.ndarray
    singular_vectors: np.ndarray  # (n, nsvs), orthonormal columns
    nsvs: int
    rel_tol: float = DEFAULT_REL_TOL

    @property
    def retained(self) -> np.ndarray:
        s = self.singular_values
        return (s > 0) & (s >= self.rel_tol * s[0])

    @property
    def usable(self) -> bool:
        s = self.singular_values
        return s[0] > 0 and s[-1] / s[0] >= self.rel_tol


@dataclass
class TsvdFailure:
    """Returned by ``tsvd`` when the requested truncation is not usable."""
    reason: str
    nsvs: int
    singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rel_tol: float = DEFAULT_REL_TOL

    def __bool__(self) -> bool:
        return False


def _householder_basis(u0: np.ndarray, k: int) -> np.ndarray:
    """k orthonormal columns, the first one equal to the unit vector u0."""
    n = u0.size
    s = 1.0 if u0[0] >= 0 else -1.0
    w = u0.copy()
    w[0] += s
    ww = w @ w
    cols = np.zeros((n, k))
    cols[:, 0] = u0
    for i in range(1, k):
        col = -2.0 * w[i] / ww * w
        col[i] += 1.0
        cols[:, i] = col
    return cols


def tsvd(cov: BackgroundCov, nsvs: int, rel_tol: float = DEFAULT_REL_TOL):
    """Leading nsvs singular triplets of B, or a TsvdFailure.

    B has rank one, so S_0 = ||e||^2 with vector e/||e|| and the trailing values
    are exact zeros; any nsvs > 1 therefore fails the rel_tol test.
    """
    if nsvs < 1:
        raise PreconditionerError(f"nsvs must be >= 1, got {nsvs}")
    n = cov.err_vector.size
    if nsvs > n:
        raise PreconditionerError(f"nsvs={nsvs} exceeds the state size {n}")
    if cov.degenerate:
        log.info("tsvd: degenerate covariance (zero anomaly)")
        return TsvdFailure('degenerate', nsvs, np.zeros(nsvs), rel_tol)

    e = cov.err_vector
    norm = float(np.linalg.norm(e))
    values = np.zeros(nsvs)
    values[0] = norm * norm
    if values[-1] / values[0] < rel_tol:
        log.info("tsvd: nsvs=%d beyond numerical rank (S_%d/S_0=%.1e < %.1e)",
                 nsvs, nsvs - 1, values[-1] / values[0], rel_tol)
        return TsvdFailure('rank', nsvs, values, rel_tol)
    return TsvdPrecon(values, _householder_basis(e / norm, nsvs), nsvs, rel_tol)


def apply_Binv(precon: TsvdPrecon, y) -> np.ndarray:
    """Pseudo-inverse of B on the retained singular subspace."""
    if not isinstance(precon, TsvdPrecon) or not precon.usable:
        raise PreconditionerError("TSVD preconditioner is not usable")
    y = _vector(y)
    keep = precon.retained
    vecs = precon.singular_vectors[:, keep]
    return vecs @ ((vecs.T @ y) / precon.singular_values[keep])


@dataclass
class ObsOperator:
    mask: np.ndarray

    def apply(self, y: np.ndarray) -> np.ndarray:
        return self.mask * y

    @property
    def density(self) -> float:
        return float(np.count_nonzero(self.mask)) / self.mask.size


def build_obs_operator(problem, grid: SphereGrid) -> ObsOperator:
    problem = as_problem(problem)
    n = grid.state_size
    if problem.sparse:
        mask = (np.arange(n) % OBS_STEP == 0).astype(np.float64)
    else:
        mask = np.ones(n)
    return ObsOperator(mask)


@dataclass
class ObsErrWeights:
    rinv: np.ndarray


def build_obs_weights(grid: SphereGrid, first_block: float = U_BLOCK_WEIGHT) -> ObsErrWeights:
    """Diagonal of R^-1: ``first_block`` on the u block, 1 elsewhere."""
    rinv = np.ones(grid.state_size)
    rinv[:grid.size] = first_block
    return ObsErrWeights(rinv)


def apply_Rinv(weights: ObsErrWeights, y) -> np.ndarray:
    y = _vector(y)
    if y.size != weights.rinv.size:
        raise StateError(f"vector has {y.size} entries, weights have {weights.rinv.size}")
    return weights.rinv * y

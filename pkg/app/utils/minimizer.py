"""
Limited-memory BFGS with an Armijo backtracking line search, and the
assimilation driver built on it.
"""

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Deque, List, Optional, Tuple

import numpy as np

from .cost_grad import AssimilationSetup, cost_and_grad
from .errors import StateError
from .swe_model import StateVector

log = logging.getLogger(__name__)

FunAndGrad = Callable[[np.ndarray], Tuple[float, np.ndarray]]


class MinimizerStatus(Enum):
    CONVERGED = "converged"
    MAXITER = "maxiter"
    LINE_SEARCH_FAILURE = "line-search-failure"


@dataclass(frozen=True)
class LbfgsOptions:
    gtol: float = 1e-8
    maxiter: int = 200
    memory: int = 10
    c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60


@dataclass
class IterationRecord:
    iteration: int
    cost: float
    grad_norm: float
    step_length: float

    def as_dict(self) -> dict:
        return {'iter': self.iteration, 'J': self.cost, 'grad_norm': self.grad_norm,
                'step': self.step_length}


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    grad: np.ndarray
    f0: float
    iterations: int
    status: MinimizerStatus
    history: List[IterationRecord] = field(default_factory=list)

    @property
    def grad_norm(self) -> float:
        return float(np.linalg.norm(self.grad))


@dataclass
class DAResult:
    x_da: StateVector
    iterations: int
    j_initial: float
    j_final: float
    grad_norm_final: float
    status: MinimizerStatus
    history: List[IterationRecord] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status is MinimizerStatus.CONVERGED


def _two_loop(g: np.ndarray, s_hist: Deque[np.ndarray], y_hist: Deque[np.ndarray]) -> np.ndarray:
    q = g.copy()
    rhos = [1.0 / (y @ s) for s, y in zip(s_hist, y_hist)]
    alphas = []
    for s, y, rho in zip(reversed(s_hist), reversed(y_hist), reversed(rhos)):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for s, y, rho, a in zip(s_hist, y_hist, rhos, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def _safe_eval(fun_and_grad: FunAndGrad, x: np.ndarray) -> Tuple[float, Optional[np.ndarray]]:
    try:
        with np.errstate(over='ignore', invalid='ignore'):
            f, g = fun_and_grad(x)
    except StateError:
        return np.inf, None
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        return np.inf, None
    return float(f), g


def lbfgs(fun_and_grad: FunAndGrad, x0: np.ndarray, opts: Optional[LbfgsOptions] = None,
          callback: Optional[Callable[[IterationRecord], None]] = None) -> LbfgsResult:
    """Minimize from x0. Stops when ||g|| <= gtol * max(1, ||g0||) or after maxiter.

    Every accepted step satisfies the Armijo condition, so the returned iterate
    is the best one seen.
    """
    opts = opts or LbfgsOptions()
    x = np.array(x0, dtype=np.float64, copy=True)
    f, g = fun_and_grad(x)
    f0 = f
    gnorm = float(np.linalg.norm(g))
    tol = opts.gtol * max(1.0, gnorm)
    history = [IterationRecord(0, f, gnorm, 0.0)]
    if callback:
        callback(history[0])
    if gnorm <= tol:
        return LbfgsResult(x, f, g, f0, 0, MinimizerStatus.CONVERGED, history)

    s_hist: Deque[np.ndarray] = deque(maxlen=opts.memory)
    y_hist: Deque[np.ndarray] = deque(maxlen=opts.memory)
    status = MinimizerStatus.MAXITER
    it = 0
    for it in range(1, opts.maxiter + 1):
        d = -_two_loop(g, s_hist, y_hist)
        slope = g @ d
        if not slope < 0:
            log.debug("lbfgs: not a descent direction, dropping memory")
            s_hist.clear()
            y_hist.clear()
            d = -g
            slope = -(g @ g)
        step = 1.0 if s_hist else min(1.0, 1.0 / gnorm)

        accepted = False
        for _ in range(opts.max_backtracks):
            x_new = x + step * d
            f_new, g_new = _safe_eval(fun_and_grad, x_new)
            if f_new <= f + opts.c1 * step * slope:
                accepted = True
                break
            step *= opts.backtrack
        if not accepted:
            log.debug("lbfgs: line search failed at iteration %d", it)
            status = MinimizerStatus.LINE_SEARCH_FAILURE
            it -= 1
            break

        s = x_new - x
        y = g_new - g
        if s @ y > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
        x, f, g = x_new, f_new, g_new
        gnorm = float(np.linalg.norm(g))
        record = IterationRecord(it, f, gnorm, step)
        history.append(record)
        if callback:
            callback(record)
        log.debug("lbfgs: iter=%d J=%.10e |g|=%.3e step=%.3e", it, f, gnorm, step)
        if gnorm <= tol:
            status = MinimizerStatus.CONVERGED
            break

    return LbfgsResult(x, f, g, f0, it, status, history)


def minimize(setup: AssimilationSetup, opts: Optional[LbfgsOptions] = None,
             callback: Optional[Callable[[IterationRecord], None]] = None) -> DAResult:
    """Minimize J starting from the background state."""
    grid = setup.grid
    res = lbfgs(lambda x: cost_and_grad(x, setup), setup.x_b.data, opts, callback)
    log.info("minimize: iterations=%d J0=%.10e J=%.10e |g|=%.3e status=%s",
             res.iterations, res.f0, res.fun, res.grad_norm, res.status.value)
    return DAResult(
        x_da=StateVector(res.x, grid.nlon, grid.nlat),
        iterations=res.iterations,
        j_initial=res.f0,
        j_final=res.fun,
        grad_norm_final=res.grad_norm,
        status=res.status,
        history=res.history,
    )

"""
Space-time domain decomposition of the assimilation problem.

Space is cut into longitude strips (periodic, optionally widened by a halo)
and the observation window into contiguous index ranges that overlap by one
observation. Every (strip, time range) pair owns a local functional

    J_local(x_loc) = background (first time range only, local B)
                     + lam * observation misfits on the strip's cells
                     + mu * sum over shared cells of (x_loc - neighbour trace)^2

where the model is always run on the latest global assembly with the local
cells replaced by x_loc. Local solutions are averaged back with 1/cover-count
weights, and outer sweeps repeat until the assembly settles.
"""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .cost_grad import AssimilationSetup, cost_and_grad, eval_cost, observation_part
from .error_models import ObsOperator, TsvdFailure, apply_Binv, build_background_cov, tsvd
from .errors import DecompositionError, PreconditionerError
from .minimizer import (
    DAResult,
    IterationRecord,
    LbfgsOptions,
    LbfgsResult,
    MinimizerStatus,
    lbfgs,
)
from .obs_factory import AssimilationWindow, ObservationSet
from .sphere_grid import SphereGrid, wrap_lon
from .swe_model import StateVector

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpaceSubdomain:
    index: int
    start: int  # first core longitude
    stop: int  # one past the last core longitude
    halo: int
    nlon: int

    @property
    def core(self) -> np.ndarray:
        return np.arange(self.start, self.stop)

    @property
    def lon_indices(self) -> np.ndarray:
        return wrap_lon(np.arange(self.start - self.halo, self.stop + self.halo), self.nlon)


@dataclass(frozen=True)
class TimeSubdomain:
    index: int
    start: int  # observation indices [start, stop)
    stop: int

    @property
    def indices(self) -> range:
        return range(self.start, self.stop)

    @property
    def carries_background(self) -> bool:
        return self.start == 0


@dataclass
class Subdomain:
    space: SpaceSubdomain
    time: TimeSubdomain
    cells: np.ndarray  # state-vector indices, all three fields

    @property
    def label(self) -> str:
        return f"s{self.space.index}t{self.time.index}"


@dataclass
class Neighbor:
    other: int
    local_positions: np.ndarray
    other_positions: np.ndarray


@dataclass
class OverlapTrace:
    positions: np.ndarray
    values: np.ndarray


@dataclass
class DomainDecomposition:
    grid: SphereGrid
    nt_obs: int
    space_subdomains: List[SpaceSubdomain]
    time_subdomains: List[TimeSubdomain]
    halo: int
    mu: float
    subdomains: List[Subdomain] = field(default_factory=list)
    cover_count: np.ndarray = field(default=None, repr=False)
    neighbors: List[List[Neighbor]] = field(default_factory=list, repr=False)

    def __len__(self) -> int:
        return len(self.subdomains)

    def overlap_cells(self, a: int, b: int) -> np.ndarray:
        """Global state indices shared by subdomains a and b."""
        for nb in self.neighbors[a]:
            if nb.other == b:
                return self.subdomains[a].cells[nb.local_positions]
        return np.zeros(0, dtype=np.intp)


@dataclass
class DDOptions:
    outer_tol: float = 1e-8
    max_sweeps: int = 10
    workers: int = 1
    min_relaxation: float = 2.0 ** -20


@dataclass
class DDResult(DAResult):
    sweeps: int = 0
    sweep_costs: List[float] = field(default_factory=list)
    local_histories: Dict[Tuple[int, str], List[IterationRecord]] = field(default_factory=dict)


def _strip_cells(grid: SphereGrid, lon: np.ndarray) -> np.ndarray:
    rows = (np.arange(3)[:, None] * grid.size + np.arange(grid.nlat)[None, :] * grid.nlon).reshape(-1)
    return (rows[:, None] + lon[None, :]).reshape(-1)


def decompose(grid: SphereGrid, window: Union[AssimilationWindow, int], n_space: int,
              n_time: int, halo: int = 0, mu: float = 1.0) -> DomainDecomposition:
    nt_obs = window.nt_obs if isinstance(window, AssimilationWindow) else int(window)
    if n_space < 1 or n_time < 1:
        raise DecompositionError(f"need at least one subdomain, got {n_space}x{n_time}")
    if halo < 0:
        raise DecompositionError(f"halo must be >= 0, got {halo}")
    if mu < 0:
        raise DecompositionError(f"mu must be >= 0, got {mu}")
    if n_space > grid.nlon:
        raise DecompositionError(f"{n_space} strips requested on {grid.nlon} longitudes")
    if n_time > nt_obs:
        raise DecompositionError(f"{n_time} time ranges requested for {nt_obs} observations")

    # a single strip is the whole periodic domain and needs no halo
    halo_eff = halo if n_space > 1 else 0
    spaces = []
    for k, part in enumerate(np.array_split(np.arange(grid.nlon), n_space)):
        width = part.size
        if n_space > 1 and width < 2 * halo_eff + 1:
            raise DecompositionError(
                f"strip {k} is {width} cells wide, thinner than 2*halo+1 = {2 * halo_eff + 1}"
            )
        if width + 2 * halo_eff > grid.nlon:
            raise DecompositionError(f"strip {k} plus halo wraps onto itself")
        spaces.append(SpaceSubdomain(k, int(part[0]), int(part[-1]) + 1, halo_eff, grid.nlon))

    times = []
    parts = np.array_split(np.arange(nt_obs), n_time)
    for k, part in enumerate(parts):
        stop = int(part[-1]) + 1 + (1 if k < n_time - 1 else 0)
        times.append(TimeSubdomain(k, int(part[0]), stop))

    subs = [Subdomain(s, t, _strip_cells(grid, s.lon_indices)) for s in spaces for t in times]
    cover = np.zeros(grid.state_size)
    for sub in subs:
        cover[sub.cells] += 1.0

    neighbors: List[List[Neighbor]] = []
    for a, sa in enumerate(subs):
        row = []
        for b, sb in enumerate(subs):
            if a == b:
                continue
            _, ia, ib = np.intersect1d(sa.cells, sb.cells, assume_unique=True,
                                       return_indices=True)
            if ia.size:
                row.append(Neighbor(b, ia, ib))
        neighbors.append(row)

    dd = DomainDecomposition(grid, nt_obs, spaces, times, halo_eff, mu, subs, cover, neighbors)
    log.info("decompose: %d strips x %d time ranges, halo=%d, mu=%g",
             n_space, n_time, halo_eff, mu)
    return dd


def restrict(x, sub: Subdomain):
    """Local data of a subdomain: state entries, observations or mask."""
    if isinstance(x, ObservationSet):
        return ObservationSet([np.asarray(x.obs[k])[sub.cells] for k in sub.time.indices],
                              x.problem, x.seed)
    if isinstance(x, ObsOperator):
        return ObsOperator(x.mask[sub.cells])
    data = x.data if isinstance(x, StateVector) else np.asarray(x, dtype=np.float64)
    return data[sub.cells]


def extend_and_sum(locals_: Sequence[np.ndarray], dd: DomainDecomposition) -> StateVector:
    """Partition-of-unity assembly: every cell gets the mean of the local values covering it."""
    if len(locals_) != len(dd.subdomains):
        raise DecompositionError(
            f"{len(locals_)} local vectors for {len(dd.subdomains)} subdomains"
        )
    acc = np.zeros(dd.grid.state_size)
    for sub, loc in zip(dd.subdomains, locals_):
        acc[sub.cells] += loc
    return StateVector(acc / dd.cover_count, dd.grid.nlon, dd.grid.nlat)


def overlap_penalty(x_local: np.ndarray, neighbor_traces: Sequence[OverlapTrace],
                    mu: float) -> Tuple[float, np.ndarray]:
    value = 0.0
    grad = np.zeros_like(x_local)
    if mu == 0:
        return value, grad
    for trace in neighbor_traces:
        diff = x_local[trace.positions] - trace.values
        value += mu * float(diff @ diff)
        grad[trace.positions] += 2.0 * mu * diff
    return value, grad


@dataclass
class LocalBreakdown:
    background: float
    observation: float
    penalty: float


class LocalProblem:
    """Local functional of one subdomain around a fixed global assembly."""

    def __init__(self, setup: AssimilationSetup, sub: Subdomain, x_base: np.ndarray,
                 traces: Sequence[OverlapTrace], mu: float):
        self.setup = setup
        self.sub = sub
        self.cells = sub.cells
        self.x_base = x_base
        self.traces = list(traces)
        self.mu = mu
        self.indices = list(sub.time.indices)
        self.select = np.zeros(setup.grid.state_size)
        self.select[self.cells] = 1.0
        self.xb_local = restrict(setup.x_b, sub)
        self.precon = None
        if sub.time.carries_background:
            precon = tsvd(build_background_cov(self.xb_local), setup.precon.nsvs,
                          setup.precon.rel_tol)
            if isinstance(precon, TsvdFailure):
                raise PreconditionerError(
                    f"local TSVD failed on subdomain {sub.label} ({precon.reason})"
                )
            self.precon = precon

    def embed(self, x_loc: np.ndarray) -> np.ndarray:
        x = self.x_base.copy()
        x[self.cells] = x_loc
        return x

    def _background(self, x_loc: np.ndarray):
        if self.precon is None:
            return 0.0, np.zeros_like(x_loc)
        d = x_loc - self.xb_local
        bd = apply_Binv(self.precon, d)
        return float(d @ bd), 2.0 * bd

    def components(self, x_loc: np.ndarray) -> LocalBreakdown:
        jb, _ = self._background(x_loc)
        jo, _ = observation_part(self.embed(x_loc), self.setup, self.indices, self.select,
                                 with_grad=False)
        jp, _ = overlap_penalty(x_loc, self.traces, self.mu)
        return LocalBreakdown(jb, jo, jp)

    def cost_and_grad(self, x_loc: np.ndarray) -> Tuple[float, np.ndarray]:
        jb, gb = self._background(x_loc)
        jo, go = observation_part(self.embed(x_loc), self.setup, self.indices, self.select)
        jp, gp = overlap_penalty(x_loc, self.traces, self.mu)
        lam = self.setup.lam
        return jb + lam * jo + jp, gb + lam * go[self.cells] + gp


def _traces(dd: DomainDecomposition, i: int, prev: Sequence[np.ndarray]) -> List[OverlapTrace]:
    return [OverlapTrace(nb.local_positions, prev[nb.other][nb.other_positions])
            for nb in dd.neighbors[i]]


def local_cost_components(x, setup: AssimilationSetup, dd: DomainDecomposition,
                          traces: Optional[Sequence[Sequence[OverlapTrace]]] = None
                          ) -> List[LocalBreakdown]:
    """Local functional parts of every subdomain evaluated at a global state."""
    x = x.data if isinstance(x, StateVector) else np.asarray(x, dtype=np.float64)
    out = []
    for i, sub in enumerate(dd.subdomains):
        tr = traces[i] if traces is not None else []
        out.append(LocalProblem(setup, sub, x, tr, dd.mu).components(x[sub.cells]))
    return out


def solve_dd(setup: AssimilationSetup, dd: DomainDecomposition,
             opts: Optional[LbfgsOptions] = None,
             dd_opts: Optional[DDOptions] = None) -> DDResult:
    """Additive-Schwarz outer iteration over local L-BFGS solves.

    A single subdomain takes exactly one sweep and reproduces the global solve.
    The assembled update is halved until the global J does not increase.
    """
    dd_opts = dd_opts or DDOptions()
    grid = setup.grid
    single = len(dd.subdomains) == 1

    x_cur = setup.x_b.data.copy()
    j_initial = eval_cost(x_cur, setup)
    j_cur = j_initial
    sweep_costs = [j_cur]
    prev = [x_cur[sub.cells].copy() for sub in dd.subdomains]
    histories: Dict[Tuple[int, str], List[IterationRecord]] = {}
    total_iters = 0
    results: List[LbfgsResult] = []
    change = np.inf
    sweep = 0

    for sweep in range(1, dd_opts.max_sweeps + 1):
        problems = [LocalProblem(setup, sub, x_cur, _traces(dd, i, prev), dd.mu)
                    for i, sub in enumerate(dd.subdomains)]

        def solve_one(i: int) -> LbfgsResult:
            return lbfgs(problems[i].cost_and_grad, x_cur[dd.subdomains[i].cells], opts)

        results = [None] * len(problems)
        if dd_opts.workers > 1 and len(problems) > 1:
            with ThreadPoolExecutor(max_workers=min(dd_opts.workers, len(problems))) as pool:
                future_map = {pool.submit(solve_one, i): i for i in range(len(problems))}
                for fut in as_completed(future_map):
                    results[future_map[fut]] = fut.result()
        else:
            results = [solve_one(i) for i in range(len(problems))]

        for sub, res in zip(dd.subdomains, results):
            histories[(sweep, sub.label)] = res.history
            total_iters += res.iterations

        x_asm = extend_and_sum([r.x for r in results], dd).data
        x_new, j_new, beta = x_asm, eval_cost(x_asm, setup), 1.0
        while j_new > j_cur and beta > dd_opts.min_relaxation:
            beta *= 0.5
            x_new = x_cur + beta * (x_asm - x_cur)
            j_new = eval_cost(x_new, setup)
        if j_new > j_cur:
            x_new, j_new = x_cur, j_cur

        change = float(np.linalg.norm(x_new - x_cur) / max(np.linalg.norm(x_cur), 1e-300))
        x_cur, j_cur = x_new, j_new
        prev = [r.x for r in results]
        sweep_costs.append(j_cur)
        log.info("solve_dd: sweep=%d J=%.10e change=%.3e relaxation=%g", sweep, j_cur, change, beta)
        if single or change < dd_opts.outer_tol:
            break

    if single:
        status = results[0].status
        grad_norm = results[0].grad_norm
    else:
        status = MinimizerStatus.CONVERGED if change < dd_opts.outer_tol else MinimizerStatus.MAXITER
        grad_norm = float(np.linalg.norm(cost_and_grad(x_cur, setup)[1]))

    return DDResult(
        x_da=StateVector(x_cur, grid.nlon, grid.nlat),
        iterations=total_iters,
        j_initial=j_initial,
        j_final=j_cur,
        grad_norm_final=grad_norm,
        status=status,
        history=results[0].history if single else [],
        sweeps=sweep,
        sweep_costs=sweep_costs,
        local_histories=histories,
    )

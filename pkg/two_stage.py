#!/usr/bin/env python3
"""
Offline ex-post learning and the online kernel-weighted reference.

Offline, every historical day is solved with hindsight (build_day_qp with the
SoC cycle) and its SoC and tie-line trajectories are stored.  Online, each
observed period adds to the squared distance between today and every stored
day, and the reference is the Nadaraya-Watson average of the stored
trajectories under the kernel exp(-d^2 / (t tau)).
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from convex_solver import DEFAULT_MAX_ITER, DEFAULT_TOL, InfeasibleError, SolverError, solve_qp
from microgrid_model import DayLayout, MicrogridSpec, ModelError, Realization, ScenarioDay, build_day_qp

logger = logging.getLogger(__name__)

DEFAULT_TAU = 1.0
EX_POST_ACCEPT_RESIDUAL = 1e-4     # worst residual tolerated on an iteration-limit exit


class ExPostError(RuntimeError):
    """An offline day program could not be solved."""

    def __init__(self, scenario_id: str, message: str):
        super().__init__(f"scenario {scenario_id}: {message}")
        self.scenario_id = scenario_id


@dataclass
class ScenarioLibrary:
    """Historical days sharing one horizon and bus indexing, plus per-bus normalization constants."""
    days: List[ScenarioDay]
    load_scale: np.ndarray
    res_scale: np.ndarray
    _obs: Optional[np.ndarray] = field(default=None, init=False, repr=False, compare=False)

    @classmethod
    def from_days(cls, days: List[ScenarioDay], load_scale: Optional[np.ndarray] = None,
                  res_scale: Optional[np.ndarray] = None) -> 'ScenarioLibrary':
        if not days:
            raise ModelError("a scenario library needs at least one day")
        T, B = days[0].load.shape
        for d in days[1:]:
            if d.load.shape != (T, B):
                raise ModelError(f"scenario {d.day_id} has shape {d.load.shape}, "
                                 f"scenario {days[0].day_id} has {(T, B)}")
        ids = [d.day_id for d in days]
        if len(set(ids)) != len(ids):
            raise ModelError("scenario ids must be unique")
        if load_scale is None:
            load_scale = _scale(np.stack([d.load for d in days]))
        if res_scale is None:
            res_scale = _scale(np.stack([d.res for d in days]))
        return cls(days=list(days), load_scale=np.asarray(load_scale, dtype=float),
                   res_scale=np.asarray(res_scale, dtype=float))

    def __len__(self) -> int:
        return len(self.days)

    def __iter__(self) -> Iterator[ScenarioDay]:
        return iter(self.days)

    @property
    def ids(self) -> List[str]:
        return [d.day_id for d in self.days]

    @property
    def horizon(self) -> int:
        return self.days[0].horizon

    def get(self, day_id: str) -> ScenarioDay:
        for d in self.days:
            if d.day_id == day_id:
                return d
        raise KeyError(day_id)

    def observation(self, real: Realization) -> np.ndarray:
        """Normalized observation vector: per-bus RES then per-bus load."""
        return np.concatenate([real.res_p / self.res_scale, real.load_p / self.load_scale])

    def observations_at(self, t: int) -> np.ndarray:
        """(S, 2B) normalized observations of every stored day at period t (1-based)."""
        if self._obs is None:
            self._obs = np.stack([np.hstack([d.res / self.res_scale, d.load / self.load_scale])
                                  for d in self.days])
        return self._obs[:, t - 1, :]


def _scale(stacked: np.ndarray) -> np.ndarray:
    peak = stacked.max(axis=(0, 1))
    peak[peak <= 0] = 1.0
    return peak


@dataclass
class ExPostEntry:
    scenario_id: str
    soc: np.ndarray     # (T, G)
    grid: np.ndarray    # (T,) MW
    cost: float


@dataclass
class ExPostSequences:
    entries: List[ExPostEntry]
    ges_names: List[str]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def ids(self) -> List[str]:
        return [e.scenario_id for e in self.entries]

    @property
    def soc(self) -> np.ndarray:
        return np.stack([e.soc for e in self.entries])

    @property
    def grid(self) -> np.ndarray:
        return np.stack([e.grid for e in self.entries])

    def aligned_to(self, library: ScenarioLibrary) -> 'ExPostSequences':
        """Reorder entries to the library's day order."""
        by_id: Dict[str, ExPostEntry] = {e.scenario_id: e for e in self.entries}
        missing = [i for i in library.ids if i not in by_id]
        if missing:
            raise ModelError(f"no ex-post sequence for scenarios {missing}")
        return ExPostSequences(entries=[by_id[i] for i in library.ids], ges_names=list(self.ges_names))


def solve_ex_post(spec: MicrogridSpec, scenario: ScenarioDay, tol: float = DEFAULT_TOL,
                  max_iter: int = DEFAULT_MAX_ITER) -> ExPostEntry:
    """
    Hindsight-optimal day with the SoC returning to its initial value.

    An iteration-limit exit is kept only when both residuals are within
    EX_POST_ACCEPT_RESIDUAL; anything worse fails the scenario.
    """
    try:
        qp = build_day_qp(spec, scenario, include_soc_cycle=True)
    except ModelError as e:
        raise ExPostError(scenario.day_id, str(e)) from e
    report = solve_qp(qp, tol=tol, max_iter=max_iter)
    try:
        report.raise_for_status(accept_residual=EX_POST_ACCEPT_RESIDUAL)
    except InfeasibleError as e:
        raise ExPostError(scenario.day_id, f"day program infeasible ({report.certificate} certificate)") from e
    except SolverError as e:
        raise ExPostError(scenario.day_id, str(e)) from e
    lay = DayLayout(spec.horizon, spec.n_ges, spec.n_dg)
    logger.info("scenario %s solved in %d iterations, cost %.2f", scenario.day_id, report.iterations,
                report.objective)
    return ExPostEntry(scenario_id=scenario.day_id, soc=lay.socs(report.x), grid=lay.grids(report.x),
                       cost=report.objective)


def _solve_one(args):
    spec, day, tol, max_iter = args
    try:
        return solve_ex_post(spec, day, tol, max_iter)
    except ExPostError as e:
        # exceptions with extra constructor arguments do not survive pickling
        return day.day_id, str(e)


def solve_library(spec: MicrogridSpec, library: ScenarioLibrary, tol: float = DEFAULT_TOL,
                  max_iter: int = DEFAULT_MAX_ITER, workers: int = 1) -> ExPostSequences:
    """Solve every stored day; results keep the library order whatever the worker count."""
    jobs = [(spec, day, tol, max_iter) for day in library]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_solve_one, jobs))
    else:
        results = [_solve_one(job) for job in jobs]
    failed = [r for r in results if not isinstance(r, ExPostEntry)]
    if failed:
        for _, message in failed:
            logger.error(message)
        raise ExPostError(', '.join(day_id for day_id, _ in failed),
                          f"{len(failed)} of {len(jobs)} day programs could not be solved")
    return ExPostSequences(entries=results, ges_names=[g.name for g in spec.ges])


@dataclass
class ReferenceState:
    """Kernel-regression state after t observed periods."""
    d2: np.ndarray
    tau: float
    t: int = 0
    weights: Optional[np.ndarray] = None
    soc_ref: Optional[np.ndarray] = None
    grid_ref: Optional[float] = None

    @classmethod
    def start(cls, library: ScenarioLibrary, tau: float = DEFAULT_TAU) -> 'ReferenceState':
        if tau <= 0:
            raise ValueError(f"bandwidth must be positive, got {tau}")
        S = len(library)
        return cls(d2=np.zeros(S), tau=tau, t=0, weights=np.full(S, 1.0 / S))


def update_distances(state: ReferenceState, observed: Realization, library: ScenarioLibrary) -> ReferenceState:
    """Add period t's squared distance to every stored day."""
    if observed.t != state.t + 1:
        raise ValueError(f"expected the observation of period {state.t + 1}, got period {observed.t}")
    obs = library.observation(observed)
    stored = library.observations_at(observed.t)
    if stored.shape[1] != obs.size:
        raise ModelError(f"observation has {obs.size} components, library has {stored.shape[1]}")
    d2 = state.d2 + np.sum((stored - obs) ** 2, axis=1)
    return replace(state, d2=d2, t=observed.t)


def kernel_weights(state: ReferenceState, t: int, tau: float) -> np.ndarray:
    if tau <= 0:
        raise ValueError(f"bandwidth must be positive, got {tau}")
    if t < 1:
        return np.full(state.d2.size, 1.0 / state.d2.size)
    logits = -state.d2 / (t * tau)
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def reference(weights: np.ndarray, sequences: ExPostSequences, t: int) -> Tuple[np.ndarray, float]:
    """Weighted average of the stored SoC (per GES) and tie-line values at period t (1-based)."""
    w = np.asarray(weights, dtype=float)
    soc = np.einsum('s,sg->g', w, sequences.soc[:, t - 1, :])
    grid = float(w @ sequences.grid[:, t - 1])
    return soc, grid


class KernelReference:
    """Reference tracker for one simulated day: observe each period, then query the next period's reference."""

    def __init__(self, library: ScenarioLibrary, sequences: ExPostSequences, tau: float = DEFAULT_TAU):
        self.library = library
        self.sequences = sequences.aligned_to(library)
        self.state = ReferenceState.start(library, tau)

    def observe(self, real: Realization):
        self.state = update_distances(self.state, real, self.library)
        self.state.weights = kernel_weights(self.state, self.state.t, self.state.tau)

    def at(self, t: int) -> Tuple[np.ndarray, float]:
        soc, grid = reference(self.state.weights, self.sequences, t)
        self.state.soc_ref, self.state.grid_ref = soc, grid
        return soc, grid


class AverageReference:
    """Fixed reference: the plain average of all stored sequences."""

    def __init__(self, sequences: ExPostSequences):
        self._soc = sequences.soc.mean(axis=0)
        self._grid = sequences.grid.mean(axis=0)

    def observe(self, real: Realization):
        pass

    def at(self, t: int) -> Tuple[np.ndarray, float]:
        return self._soc[t - 1].copy(), float(self._grid[t - 1])

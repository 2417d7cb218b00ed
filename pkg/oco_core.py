#!/usr/bin/env python3
"""
Adaptive virtual-queue online convex optimization.

N experts run the queue-weighted proximal update in parallel, each with its own
learning rate and queue floor; the committed action is their weighted average
and the weights follow an exponential (multiplicative) update on linearized
losses.  Nothing in here knows about microgrids: rounds are a convex cost, an
affine constraint block g(x) = Gx + h and a box.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from convex_solver import AffineRows, Box, solve_prox_step

logger = logging.getLogger(__name__)

DEFAULT_CHI = 0.1
DEFAULT_DELTA = 0.2

ProxSolver = Callable[..., np.ndarray]


@dataclass(frozen=True)
class ParamSchedule:
    """Step sizes, queue gains and floors for a horizon of T rounds."""
    horizon: int
    chi: float
    delta: float
    expert_count: int
    meta_rate: float

    def alpha(self, i: int, t: int) -> float:
        return 2.0 ** (i - 1) / t ** (0.5 + self.chi)

    def beta(self, t: int) -> float:
        return float(t) ** (0.5 + self.delta)

    def theta(self, i: int, t: int) -> float:
        return 2.0 ** (i - 1) * t


def make_schedule(T: int, chi: float = DEFAULT_CHI, delta: float = DEFAULT_DELTA) -> ParamSchedule:
    if T < 1:
        raise ValueError(f"horizon must be at least one round, got {T}")
    if not 0.0 < chi < delta < 0.5:
        raise ValueError(f"need 0 < chi < delta < 1/2, got chi={chi}, delta={delta}")
    N = math.ceil(0.5 * math.log2(1 + T)) + 1
    return ParamSchedule(horizon=T, chi=chi, delta=delta, expert_count=N, meta_rate=1.0 / math.sqrt(T))


@dataclass
class ExpertState:
    index: int
    x: np.ndarray
    queue: np.ndarray
    weight: float


@dataclass
class ExpertBank:
    experts: List[ExpertState]
    x: np.ndarray
    schedule: ParamSchedule

    @property
    def weights(self) -> np.ndarray:
        return np.array([e.weight for e in self.experts])


def init_bank(schedule: ParamSchedule, x_init: np.ndarray, dim_g: int) -> ExpertBank:
    if dim_g < 0:
        raise ValueError(f"dim_g must be nonnegative, got {dim_g}")
    x_init = np.asarray(x_init, dtype=float)
    N = schedule.expert_count
    experts = [
        ExpertState(index=i, x=x_init.copy(), queue=np.zeros(dim_g), weight=(N + 1) / (i * (i + 1) * N))
        for i in range(1, N + 1)
    ]
    # the telescoping sum is exact only up to rounding
    total = sum(e.weight for e in experts)
    for e in experts:
        e.weight /= total
    return ExpertBank(experts=experts, x=x_init.copy(), schedule=schedule)


def queue_update(Q_prev, beta: float, violation, theta: float):
    """max(Q_prev + beta * violation, theta), elementwise over constraint rows."""
    violation = np.asarray(violation, dtype=float)
    if np.any(violation < 0):
        raise ValueError("violation must be clipped to its positive part before the queue update")
    out = np.maximum(np.asarray(Q_prev, dtype=float) + beta * violation, theta)
    return float(out) if out.ndim == 0 else out


def expert_step(expert: ExpertState, grad_f: np.ndarray, g_prev: AffineRows, alpha: float, beta: float,
                box: Box, prox_solver: ProxSolver = solve_prox_step) -> np.ndarray:
    """Queue-weighted proximal step of one expert around its own previous iterate."""
    # the box moves between rounds; re-anchor the center so the prox is well posed
    x_prev = box.project(expert.x)
    return prox_solver(np.asarray(grad_f, dtype=float), expert.queue, alpha, alpha * beta, g_prev, box, x_prev)


def separable_hinge_prox(grad: np.ndarray, queue: np.ndarray, alpha: float, gain: float,
                         g_rows: AffineRows, box: Box, x_prev: np.ndarray) -> np.ndarray:
    """
    Closed-form prox step for one row per coordinate, g_k(x) = a_k x_k + h_k with a_k > 0.

    Each coordinate minimizes alpha*grad*x + w*a*[x - kink]_+ + (x - x_prev)^2, a
    one-dimensional convex problem whose minimizer is clipped onto the box.
    """
    G = g_rows.G
    n = x_prev.size
    a = np.diag(G) if G.shape == (n, n) else None
    if a is None or np.any(a <= 0) or np.count_nonzero(G - np.diag(a)):
        raise ValueError("separable prox needs one positively scaled row per coordinate")
    kink = -g_rows.h / a
    w = gain * np.asarray(queue, dtype=float) * a
    below = x_prev - 0.5 * alpha * grad
    above = x_prev - 0.5 * (alpha * grad + w)
    x = np.where(below <= kink, below, np.where(above >= kink, above, kink))
    return box.project(x)


@dataclass(frozen=True)
class QuadraticCost:
    """f(x) = 1/2 x'Px + q'x + offset with P symmetric PSD."""
    P: np.ndarray
    q: np.ndarray
    offset: float = 0.0

    def __call__(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.q @ x + self.offset)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.P @ np.asarray(x, dtype=float) + self.q

    def scaled(self, factor: float) -> 'QuadraticCost':
        return QuadraticCost(P=self.P / factor, q=self.q / factor, offset=self.offset / factor)


@dataclass
class RevealedRound:
    """Cost, constraints and box of one round, known only after the action is committed."""
    cost: QuadraticCost
    constraints: AffineRows
    box: Box


@dataclass
class RoundRecord:
    t: int
    action: np.ndarray
    cost: float
    g_values: np.ndarray
    x_star: Optional[np.ndarray] = None
    cost_star: Optional[float] = None


@dataclass
class OcoMetrics:
    dynamic_regret: Optional[float]
    vio_hard: float
    vio_soft: float
    path_length: Optional[float]
    benchmark_coverage: float = 1.0

    def to_dict(self) -> dict:
        return {
            'dynamic_regret': self.dynamic_regret,
            'vio_hard': self.vio_hard,
            'vio_soft': self.vio_soft,
            'path_length': self.path_length,
            'benchmark_coverage': self.benchmark_coverage,
        }

def condition_round(revealed: RevealedRound, expert_count: int) -> RevealedRound:
    """
    Divide the round cost by 2^(N-2) * max(lambda_max(P), ||grad f||_box / diam(box)).

    Under this scale the fastest expert's gradient step moves at most one box
    diameter and never expands distances to the round minimizer.  Constraint
    rows and the box are left as revealed.
    """
    cost, box = revealed.cost, revealed.box
    P = np.atleast_2d(cost.P)
    lam = float(np.linalg.eigvalsh(0.5 * (P + P.T)).max()) if P.size else 0.0
    width = box.hi - box.lo
    diam = float(np.linalg.norm(width))
    spread = lam
    if diam > 0:
        centre = box.lo + 0.5 * width
        bound = float(np.linalg.norm(cost.gradient(centre))) + 0.5 * lam * diam
        spread = max(spread, bound / diam)
    scale = 2.0 ** (expert_count - 2) * spread
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    return RevealedRound(cost=cost.scaled(scale), constraints=revealed.constraints, box=box)



def aggregate(bank: ExpertBank) -> np.ndarray:
    return sum(e.weight * e.x for e in bank.experts)


def weight_update(bank: ExpertBank, grad_f_t: np.ndarray, gamma: float) -> ExpertBank:
    """Exponential reweighting on the surrogate losses <grad, x_i - x>."""
    grad_f_t = np.asarray(grad_f_t, dtype=float)
    losses = np.array([grad_f_t @ (e.x - bank.x) for e in bank.experts])
    with np.errstate(divide='ignore'):
        logits = np.log(bank.weights) - gamma * losses
    logits -= logits.max()
    w = np.exp(logits)
    w /= w.sum()
    for e, wi in zip(bank.experts, w):
        e.weight = float(wi)
    return bank


def compute_metrics(history: Sequence[RoundRecord]) -> OcoMetrics:
    """Dynamic regret, hard/soft cumulative violation and benchmark path length."""
    if not history:
        return OcoMetrics(dynamic_regret=None, vio_hard=0.0, vio_soft=0.0, path_length=None, benchmark_coverage=0.0)
    ts = [r.t for r in history]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ValueError("round indices must be strictly increasing")

    dims = {np.size(r.g_values) for r in history}
    if len(dims) > 1:
        raise ValueError(f"constraint dimension changes across rounds: {sorted(dims)}")
    if dims == {0}:
        vio_hard = vio_soft = 0.0
    else:
        G = np.array([np.asarray(r.g_values, dtype=float) for r in history])
        vio_hard = float(np.linalg.norm(np.maximum(G, 0.0), axis=1).sum())
        vio_soft = float(np.linalg.norm(np.maximum(G.sum(axis=0), 0.0)))

    covered = [r for r in history if r.x_star is not None and r.cost_star is not None]
    coverage = len(covered) / len(history)
    regret = path = None
    if covered:
        regret = float(sum(r.cost - r.cost_star for r in covered))
        if coverage < 1.0:
            logger.info("regret over %d of %d rounds (benchmark missing elsewhere)", len(covered), len(history))
        path = 0.0
        for a, b in zip(covered, covered[1:]):
            path += float(np.linalg.norm(np.asarray(b.x_star) - np.asarray(a.x_star)))
    return OcoMetrics(dynamic_regret=regret, vio_hard=vio_hard, vio_soft=vio_soft,
                      path_length=path, benchmark_coverage=coverage)


class AdaptiveQueueLearner:
    """
    The online stage as a decide/observe loop.

    decide(t, box) commits x_t using only rounds 1..t-1; observe(t, round)
    reveals f_t, g_t and performs the expert reweighting.  With condition=True
    the experts see each revealed cost divided by condition_round's scale, while
    the returned records keep the true cost.  decide's optional shift moves every
    expert centre before its step, so a caller with a causal guess of how the
    minimizer drifts can feed it forward.
    """

    def __init__(self, schedule: ParamSchedule, x_init: np.ndarray, dim_g: int,
                 prox_solver: ProxSolver = solve_prox_step, trace_weights: bool = False,
                 condition: bool = False):
        self.schedule = schedule
        self.bank = init_bank(schedule, x_init, dim_g)
        self.prox_solver = prox_solver
        self.trace_weights = trace_weights
        self.condition = condition
        self.weight_trace: List[np.ndarray] = []
        self._t = 0
        self._last: Optional[RevealedRound] = None

    def decide(self, t: int, box: Box, shift: Optional[np.ndarray] = None) -> np.ndarray:
        if t != self._t + 1:
            raise ValueError(f"expected round {self._t + 1}, got {t}")
        if shift is not None:
            shift = np.asarray(shift, dtype=float)
            if shift.shape != self.bank.x.shape:
                raise ValueError(f"shift has shape {shift.shape}, decisions have {self.bank.x.shape}")
        s = self.schedule
        prev = self._last
        for expert in self.bank.experts:
            if prev is None:
                expert.x = box.project(expert.x if shift is None else expert.x + shift)
                continue
            tp = t - 1
            beta = s.beta(tp)
            violation = np.maximum(prev.constraints(expert.x), 0.0)
            expert.queue = np.asarray(queue_update(expert.queue, beta, violation, s.theta(expert.index, tp)))
            grad = prev.cost.gradient(expert.x)
            if shift is not None:
                expert.x = expert.x + shift
            expert.x = expert_step(expert, grad, prev.constraints, s.alpha(expert.index, tp), beta, box,
                                   self.prox_solver)
        self.bank.x = box.project(aggregate(self.bank))
        self._t = t
        return self.bank.x.copy()

    def observe(self, t: int, revealed: RevealedRound) -> RoundRecord:
        if t != self._t:
            raise ValueError(f"observing round {t} before deciding it")
        x = self.bank.x
        record = RoundRecord(t=t, action=x.copy(), cost=revealed.cost(x), g_values=revealed.constraints(x))
        if self.condition:
            revealed = condition_round(revealed, self.schedule.expert_count)
        weight_update(self.bank, revealed.cost.gradient(x), self.schedule.meta_rate)
        if self.trace_weights:
            self.weight_trace.append(self.bank.weights)
        self._last = revealed
        return record


def loglog_slope(horizons: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of log(value) against log(horizon)."""
    h = np.asarray(horizons, dtype=float)
    v = np.asarray(values, dtype=float)
    if h.size < 2 or np.any(h <= 0) or np.any(v <= 0):
        raise ValueError("slope fit needs at least two positive (horizon, value) pairs")
    slope, _ = np.polyfit(np.log(h), np.log(v), 1)
    return float(slope)

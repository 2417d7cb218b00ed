#!/usr/bin/env python3
"""
Day-level dispatch simulation.

Each period the policy commits a dispatch before the period's loads, RES and
price are revealed; the realized period then becomes an OCO round (quadratic
cost with the tracking penalties, voltage rows as the constraint block,
device limits as the box) and the state of charge moves on.

Policies:
    M3    online learner tracking the kernel-weighted ex-post reference
    M3-a  online learner on the operating cost alone
    M3-b  online learner tracking the plain average of the ex-post sequences
    M3-c  strict tracking of the kernel-weighted reference
    M4    day-long optimum with perfect knowledge

The learning policies move their experts along the minimizer of the round cost
predicted from the last observation, and the learner sees every revealed cost
rescaled by its curvature and gradient bound.
"""

import logging
import time
import zlib
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from convex_solver import (
    DEFAULT_MAX_ITER, DEFAULT_TOL, STATUS_INFEASIBLE, AffineRows, Box, QuadraticProgram, SolverError,
    solve_qp,
)
from microgrid_model import (
    DayLayout, DispatchDecision, MicrogridSpec, ModelError, Realization, ScenarioDay, build_day_qp,
    distflow_solve, fluctuation_indices, ges_bounds, net_load, smoothing_penalty, soc_transition,
    stage_cost, tie_line_power, voltage_affine, voltage_satisfaction,
)
from oco_core import (
    AdaptiveQueueLearner, OcoMetrics, QuadraticCost, RevealedRound, RoundRecord, compute_metrics,
    make_schedule, separable_hinge_prox,
)
from two_stage import DEFAULT_TAU, AverageReference, ExPostSequences, KernelReference, ScenarioLibrary

logger = logging.getLogger(__name__)

POLICIES = ('M3', 'M3-a', 'M3-b', 'M3-c', 'M4')
ONLINE_POLICIES = ('M3', 'M3-a', 'M3-b', 'M3-c')
LEARNING_POLICIES = ('M3', 'M3-a', 'M3-b')
REFERENCE_POLICIES = ('M3', 'M3-b', 'M3-c')

BOX_TOL = 1e-9


class EmptyBoxError(ValueError):
    """No device set point satisfies the round's limits."""

    def __init__(self, period: int, bound: str, message: str):
        super().__init__(message)
        self.period = period
        self.bound = bound


class DayAbortedError(RuntimeError):
    """A round failed; the day cannot continue."""

    def __init__(self, policy: str, day_id: str, round_t: int, cause: Exception):
        super().__init__(f"{policy} on {day_id} aborted in round {round_t}: {cause}")
        self.policy = policy
        self.day_id = day_id
        self.round_t = round_t


def normalize_policy(name: str) -> str:
    """Accept 'M3a' as well as 'M3-a'."""
    key = name.strip().upper().replace('-', '')
    for p in POLICIES:
        if p.replace('-', '').upper() == key:
            return p
    raise ValueError(f"unknown policy '{name}' (known: {', '.join(POLICIES)})")


@dataclass
class SimSettings:
    chi: float = 0.1
    delta: float = 0.2
    tau: float = DEFAULT_TAU
    noise: float = 0.0          # percent standard deviation of the observation noise
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    relax: bool = True
    with_regret: bool = False
    trace: bool = False


@dataclass
class SystemState:
    t: int                          # last completed period, 0 before the day starts
    soc: np.ndarray                 # per GES
    dg_prev: np.ndarray             # per DG, NaN when unknown
    grid_prev: Optional[float] = None

    @classmethod
    def initial(cls, spec: MicrogridSpec) -> 'SystemState':
        prev = np.array([np.nan if d.p_init is None else d.p_init for d in spec.dg], dtype=float)
        return cls(t=0, soc=np.array([g.soc_init for g in spec.ges], dtype=float), dg_prev=prev)


@dataclass
class RoundProblem:
    """Realized round: cost f_t, voltage rows g_t and box X_t, plus the affine SoC and tie-line maps."""
    t: int
    cost: QuadraticCost
    constraints: AffineRows
    box: Box
    soc_map: Tuple[np.ndarray, np.ndarray]      # SoC'(x) = S x + s0
    grid_map: Tuple[np.ndarray, float]          # P_grid(x) = a x + g0
    relaxed: List[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Round construction
# ---------------------------------------------------------------------------

def soc_map(spec: MicrogridSpec, state: SystemState, t: int) -> Tuple[np.ndarray, np.ndarray]:
    """Post-action SoC as an affine function of the decision vector."""
    G = spec.n_ges
    S = np.zeros((G, spec.n_x))
    s0 = np.zeros(G)
    dt = spec.pricing.dt
    for j, g in enumerate(spec.ges):
        S[j, j] = g.eta_c * dt / g.capacity
        S[j, G + j] = -dt / (g.eta_d * g.capacity)
        s0[j] = soc_transition(state.soc[j], 0.0, 0.0, g, dt, t)
    return S, s0


def tie_line_row(spec: MicrogridSpec) -> np.ndarray:
    G = spec.n_ges
    return np.concatenate([np.ones(G), -np.ones(G), -np.ones(spec.n_dg)])


def grid_map(spec: MicrogridSpec, real: Realization) -> Tuple[np.ndarray, float]:
    return tie_line_row(spec), float(real.load_p.sum() - real.res_p.sum())


def round_box(spec: MicrogridSpec, state: SystemState, t: int, relax: bool = False) -> Tuple[Box, List[str]]:
    """Device limits of period t around the known state; needs nothing from period t's realization."""
    G = spec.n_ges
    lo = np.zeros(spec.n_x)
    hi = np.zeros(spec.n_x)
    events: List[str] = []
    S, s0 = soc_map(spec, state, t)
    r = t - 1

    def settle(idx: int, low: float, high: float, bound: str, message: str):
        if low > high:
            if low - high > BOX_TOL:
                if not relax:
                    raise EmptyBoxError(t, bound, f"period {t}: {message}")
                logger.warning("period %d: relaxing %s (%s)", t, bound, message)
                events.append(f"period {t}: {bound}")
            low = high
        lo[idx], hi[idx] = low, high

    for j, g in enumerate(spec.ges):
        b = ges_bounds(g, spec.pricing)
        kc, kd = S[j, j], -S[j, G + j]
        base, smin, smax = s0[j], b.soc_min[r], b.soc_max[r]
        reach = f"SoC band [{smin:.4g}, {smax:.4g}] from {state.soc[j]:.4g}"
        settle(j, max(0.0, (smin - base) / kc), min(b.charge_max[r], max(0.0, (smax - base) / kc)),
               f"charge limit of {g.name}", f"charging cannot reach {reach}")
        settle(G + j, max(0.0, (base - smax) / kd), min(b.discharge_max[r], max(0.0, (base - smin) / kd)),
               f"discharge limit of {g.name}", f"discharging cannot reach {reach}")
    for k, d in enumerate(spec.dg):
        prev = state.dg_prev[k]
        low, high = d.p_min, d.p_max
        if not np.isnan(prev):
            low, high = max(low, prev - d.ramp_down), min(high, prev + d.ramp_up)
        settle(2 * G + k, low, high, f"ramp limit of {d.name}",
               f"output {prev:.4g} MW cannot ramp into [{d.p_min}, {d.p_max}]")
    return Box(lo, hi), events


def tracking_terms(spec: MicrogridSpec, soc_affine, grid_affine, ref) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    phi1 * sum_j (SoC'_j - R_soc_j)^2 + phi2 * (scale * (P_grid - R_grid))^2 as (P, q, offset).

    grid_affine=None drops the tie-line term.
    """
    n = spec.n_x
    P = np.zeros((n, n))
    q = np.zeros(n)
    offset = 0.0
    if ref is None:
        return P, q, offset
    pricing = spec.pricing
    soc_ref, grid_ref = ref
    S, s0 = soc_affine
    for j in range(spec.n_ges):
        e = s0[j] - soc_ref[j]
        P += 2 * pricing.phi1 * np.outer(S[j], S[j])
        q += 2 * pricing.phi1 * e * S[j]
        offset += pricing.phi1 * e ** 2
    if grid_affine is None:
        return P, q, offset
    a, g0 = grid_affine
    w = pricing.phi2 * pricing.grid_tracking_scale ** 2
    e = g0 - grid_ref
    P += 2 * w * np.outer(a, a)
    q += 2 * w * e * a
    offset += w * e ** 2
    return P, q, offset


def operating_terms(spec: MicrogridSpec, price: float) -> Tuple[np.ndarray, np.ndarray]:
    """GES throughput, tie-line purchase and DG fuel cost as (P, q); constant parts are left to the caller."""
    dt = spec.pricing.dt
    G, n = spec.n_ges, spec.n_x
    P = np.zeros((n, n))
    q = np.zeros(n)
    for j, g in enumerate(spec.ges):
        q[j] += g.cost_charge * dt
        q[G + j] += g.cost_discharge * dt
    q += price * dt * tie_line_row(spec)
    for k, d in enumerate(spec.dg):
        P[2 * G + k, 2 * G + k] += 2 * d.a * dt
        q[2 * G + k] += d.b * dt
    return P, q


def build_round_problem(spec: MicrogridSpec, state: SystemState, ref, real: Realization,
                        relax: bool = False) -> RoundProblem:
    """
    Round t = real.t as an OCO round: operating cost plus tracking penalties
    (ref=None drops them), voltage limits through the linear DistFlow map.
    """
    t = real.t
    dt = spec.pricing.dt
    box, events = round_box(spec, state, t, relax)
    S = soc_map(spec, state, t)
    gm = grid_map(spec, real)
    g0 = gm[1]

    P, q, offset = tracking_terms(spec, S, gm, ref)
    P_op, q_op = operating_terms(spec, real.price)
    P += P_op
    q += q_op
    offset += real.price * dt * g0 + sum(d.c * dt for d in spec.dg)

    v0, J = voltage_affine(spec, real)
    net = spec.network
    rows = AffineRows(np.vstack([-J, J]), np.concatenate([net.v_min - v0, v0 - net.v_max]))
    return RoundProblem(t=t, cost=QuadraticCost(P=P, q=q, offset=offset), constraints=rows, box=box,
                        soc_map=S, grid_map=gm, relaxed=events)


def inject_noise(real: Realization, sigma: float, rng) -> Realization:
    """Scale each load and RES component by (1 + X/100), X ~ Normal(0, sigma^2), clamped at zero."""
    if sigma < 0:
        raise ValueError(f"noise level must be nonnegative, got {sigma}")
    if sigma == 0:
        return replace(real, load_p=real.load_p.copy(), load_q=real.load_q.copy(), res_p=real.res_p.copy())
    B = real.load_p.size
    x = np.asarray(rng.normal(0.0, sigma, 2 * B), dtype=float)
    load_factor = np.maximum(1.0 + x[:B] / 100.0, 0.0)
    res_factor = np.maximum(1.0 + x[B:] / 100.0, 0.0)
    return Realization(t=real.t, load_p=real.load_p * load_factor, load_q=real.load_q * load_factor,
                       res_p=real.res_p * res_factor, price=real.price)


def run_rng(seed: int, policy: str, day_id: str) -> np.random.Generator:
    """Independent stream per (master seed, policy, day)."""
    return np.random.default_rng(np.random.SeedSequence([seed, POLICIES.index(policy), zlib.crc32(day_id.encode())]))


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

@dataclass
class DayResult:
    policy: str
    day_id: str
    seed: int
    noise: float
    actions: np.ndarray             # (T, n_x)
    soc: np.ndarray                 # (T, G) after each period's action
    grid: np.ndarray                # (T,) MW
    voltages: np.ndarray            # (T, monitored buses) p.u.
    stage_costs: np.ndarray         # (T, 3): GES, grid, DG
    smoothing: float
    xi1: float
    xi2: float
    voltage_satisfaction: float
    metrics: Optional[OcoMetrics] = None
    relaxations: List[str] = field(default_factory=list)
    wall_clock: Optional[float] = None
    expert_weights: Optional[np.ndarray] = None
    scenario_weights: Optional[np.ndarray] = None
    decision_labels: List[str] = field(default_factory=list)
    ges_names: List[str] = field(default_factory=list)

    @property
    def cost_ges(self) -> float:
        return float(self.stage_costs[:, 0].sum())

    @property
    def cost_grid(self) -> float:
        return float(self.stage_costs[:, 1].sum())

    @property
    def cost_dg(self) -> float:
        return float(self.stage_costs[:, 2].sum())

    @property
    def total_cost(self) -> float:
        return float(self.stage_costs.sum() + self.smoothing)

    def to_dict(self, timing: bool = False) -> dict:
        return {
            'policy': self.policy,
            'day_id': self.day_id,
            'seed': self.seed,
            'noise_percent': self.noise,
            'periods': int(self.grid.size),
            'cost': {
                'ges': self.cost_ges,
                'grid': self.cost_grid,
                'dg': self.cost_dg,
                'smoothing': self.smoothing,
                'total': self.total_cost,
            },
            'xi1': self.xi1,
            'xi2': self.xi2,
            'voltage_satisfaction_percent': self.voltage_satisfaction,
            'oco_metrics': None if self.metrics is None else self.metrics.to_dict(),
            'relaxations': list(self.relaxations),
            'wall_clock_s': self.wall_clock if timing else None,
        }

    def trajectory_frame(self) -> pd.DataFrame:
        data = {'t': np.arange(1, self.grid.size + 1), 'grid_mw': self.grid}
        for j, name in enumerate(self.ges_names):
            data[f"soc_{name}"] = self.soc[:, j]
        n_dg = self.actions.shape[1] - 2 * len(self.ges_names)
        for k in range(n_dg):
            data[self.decision_labels[2 * len(self.ges_names) + k]] = self.actions[:, 2 * len(self.ges_names) + k]
        for j, name in enumerate(self.ges_names):
            data[f"pc_{name}"] = self.actions[:, j]
            data[f"pd_{name}"] = self.actions[:, len(self.ges_names) + j]
        return pd.DataFrame(data)

    def weights_frame(self) -> Optional[pd.DataFrame]:
        parts = []
        if self.expert_weights is not None:
            parts.append(pd.DataFrame(self.expert_weights,
                                      columns=[f"expert_{i + 1}" for i in range(self.expert_weights.shape[1])]))
        if self.scenario_weights is not None:
            parts.append(pd.DataFrame(self.scenario_weights,
                                      columns=[f"scenario_{i + 1}" for i in range(self.scenario_weights.shape[1])]))
        if not parts:
            return None
        df = pd.concat(parts, axis=1)
        df.insert(0, 't', np.arange(1, len(df) + 1))
        return df


def account_day(spec: MicrogridSpec, day: ScenarioDay, actions: np.ndarray, soc: np.ndarray,
                policy: str, seed: int = 0, noise: float = 0.0) -> DayResult:
    """Costs, fluctuation and voltage statistics of an executed day, always on the true realization."""
    T = actions.shape[0]
    stage = np.zeros((T, 3))
    grid = np.zeros(T)
    mon = spec.network.monitored_index
    volts = np.zeros((T, mon.size))
    for r in range(T):
        real = day.realization(r + 1, spec.load_tan_phi)
        c = stage_cost(actions[r], real, spec.pricing, spec)
        stage[r] = (c.ges, c.grid, c.dg)
        grid[r] = tie_line_power(actions[r], real, spec)
        p, qv = net_load(spec, actions[r], real)
        volts[r] = distflow_solve(spec.network, p, qv).voltage[mon]
    smooth = smoothing_penalty(grid, day.grid_init, spec.pricing.c_pl1, spec.pricing.c_pl2)
    xi1, xi2 = fluctuation_indices(grid) if T >= 2 else (0.0, 0.0)
    vs = voltage_satisfaction(volts, spec.network.v_min, spec.network.v_max) if volts.size else 100.0
    return DayResult(policy=policy, day_id=day.day_id, seed=seed, noise=noise, actions=actions, soc=soc,
                     grid=grid, voltages=volts, stage_costs=stage, smoothing=smooth, xi1=xi1, xi2=xi2,
                     voltage_satisfaction=vs, decision_labels=spec.decision_labels(),
                     ges_names=[g.name for g in spec.ges])


# ---------------------------------------------------------------------------
# Policies
# ---------------------------------------------------------------------------

def _price_estimate(spec: MicrogridSpec, last_obs: Realization, t: int) -> float:
    """Last observed price carried along the tariff profile to period t."""
    tariff = spec.pricing.tou_price
    base = tariff[last_obs.t - 1]
    if base <= 0:
        return float(last_obs.price)
    return float(last_obs.price * tariff[t - 1] / base)


def predicted_action(spec: MicrogridSpec, state: SystemState, box: Box, ref, last_obs: Optional[Realization],
                     t: int, settings: SimSettings, operating: bool = True) -> np.ndarray:
    """
    Box-feasible minimizer of the round cost predicted for period t.

    The tie-line is judged on the last observation and the price follows the
    tariff from the last observed level.  Before anything is observed the tariff
    price stands in and the tie-line term is dropped.  operating=False keeps the
    tracking terms alone.
    """
    S = soc_map(spec, state, t)
    if last_obs is None:
        gm, price = None, float(spec.pricing.tou_price[t - 1])
    else:
        gm, price = grid_map(spec, replace(last_obs, t=t)), _price_estimate(spec, last_obs, t)
    P, q, offset = tracking_terms(spec, S, gm, ref)
    if operating:
        P_op, q_op = operating_terms(spec, price)
        P, q = P + P_op, q + q_op
    report = solve_qp(QuadraticProgram(P=P, q=q, lo=box.lo, hi=box.hi, offset=offset),
                      tol=settings.tol, max_iter=settings.max_iter)
    report.raise_for_status(accept_residual=1e-4)
    return box.project(report.x)


def round_benchmark(history: List[RoundRecord], spec: MicrogridSpec, problems: Sequence[RoundProblem],
                    tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> List[RoundRecord]:
    """Fill x_t* and f_t(x_t*) of every round from its realized problem; infeasible rounds stay empty."""
    by_t = {p.t: p for p in problems}
    for rec in history:
        prob = by_t.get(rec.t)
        if prob is None:
            continue
        rows = prob.constraints
        qp = QuadraticProgram(P=prob.cost.P, q=prob.cost.q, A=rows.G, l=np.full(rows.dim, -np.inf), u=-rows.h,
                              lo=prob.box.lo, hi=prob.box.hi, offset=prob.cost.offset)
        report = solve_qp(qp, tol=tol, max_iter=max_iter)
        if report.status == STATUS_INFEASIBLE:
            logger.info("round %d has no feasible benchmark", rec.t)
            continue
        rec.x_star = report.x
        rec.cost_star = prob.cost(report.x)
    return history


def run_day(policy: str, spec: MicrogridSpec, true_day: ScenarioDay, library: Optional[ScenarioLibrary] = None,
            sequences: Optional[ExPostSequences] = None, settings: Optional[SimSettings] = None, seed: int = 0,
            initial_state: Optional[SystemState] = None, n_rounds: Optional[int] = None) -> DayResult:
    """Simulate one day of an online policy; decisions never read the period they act on."""
    policy = normalize_policy(policy)
    if policy == 'M4':
        return run_m4(spec, true_day, settings=settings, initial_state=initial_state)
    settings = settings or SimSettings()
    if policy in REFERENCE_POLICIES and (sequences is None or (policy != 'M3-b' and library is None)):
        raise ValueError(f"{policy} needs the offline library and its ex-post sequences")
    T = spec.horizon if n_rounds is None else n_rounds
    if true_day.horizon != spec.horizon:
        raise ModelError(f"day {true_day.day_id} has {true_day.horizon} periods, spec horizon is {spec.horizon}")
    started = time.perf_counter()
    rng = run_rng(seed, policy, true_day.day_id)
    state = initial_state or SystemState.initial(spec)
    state = replace(state, t=0, soc=state.soc.copy(), dg_prev=state.dg_prev.copy())

    if policy == 'M3-b':
        tracker = AverageReference(sequences)
    elif policy in ('M3', 'M3-c'):
        tracker = KernelReference(library, sequences, settings.tau)
    else:
        tracker = None

    x_init = np.concatenate([np.zeros(2 * spec.n_ges),
                             [d.p_min if np.isnan(p) else p for d, p in zip(spec.dg, state.dg_prev)]])
    learner = None
    if policy in LEARNING_POLICIES:
        schedule = make_schedule(spec.horizon, settings.chi, settings.delta)
        learner = AdaptiveQueueLearner(schedule, x_init, dim_g=2 * len(spec.network.monitored),
                                       trace_weights=settings.trace, condition=True)
    anchor = x_init

    actions = np.zeros((T, spec.n_x))
    socs = np.zeros((T, spec.n_ges))
    history: List[RoundRecord] = []
    problems: List[RoundProblem] = []
    relaxations: List[str] = []
    scenario_trace = []
    last_obs: Optional[Realization] = None

    for t in range(1, T + 1):
        try:
            ref = tracker.at(t) if tracker is not None else None
            if settings.trace and isinstance(tracker, KernelReference):
                scenario_trace.append(tracker.state.weights.copy())
            box, events = round_box(spec, state, t, settings.relax)
            relaxations.extend(events)
            if learner is not None:
                # the experts ride along with the predicted minimizer and learn the correction
                target = predicted_action(spec, state, box, ref, last_obs, t, settings)
                x = learner.decide(t, box, shift=target - anchor)
                anchor = target
            elif t == 1 or last_obs is None:
                x = box.project(x_init)
            else:
                x = predicted_action(spec, state, box, ref, last_obs, t, settings, operating=False)

            # period t is revealed only now
            real = true_day.realization(t, spec.load_tan_phi)
            obs = inject_noise(real, settings.noise, rng)
            true_problem = build_round_problem(spec, state, ref, real, relax=settings.relax)
            if learner is not None:
                observed = true_problem if settings.noise == 0 else \
                    build_round_problem(spec, state, ref, obs, relax=settings.relax)
                learner.observe(t, observed)
        except (SolverError, EmptyBoxError) as e:
            raise DayAbortedError(policy, true_day.day_id, t, e) from e

        history.append(RoundRecord(t=t, action=x.copy(), cost=true_problem.cost(x),
                                   g_values=true_problem.constraints(x)))
        if settings.with_regret:
            problems.append(true_problem)
        if tracker is not None:
            tracker.observe(obs)
        last_obs = obs

        S, s0 = true_problem.soc_map
        new_soc = S @ x + s0
        if np.any((new_soc < -BOX_TOL) | (new_soc > 1 + BOX_TOL)):
            logger.warning("period %d: SoC %s left [0, 1] and was clipped", t, np.round(new_soc, 6))
        state = SystemState(t=t, soc=np.clip(new_soc, 0.0, 1.0), dg_prev=x[2 * spec.n_ges:].copy(),
                            grid_prev=tie_line_power(x, real, spec))
        actions[t - 1] = x
        socs[t - 1] = state.soc

    if settings.with_regret and problems:
        round_benchmark(history, spec, problems, settings.tol, settings.max_iter)

    part_day = replace(true_day, price=true_day.price[:T], load=true_day.load[:T], res=true_day.res[:T])
    result = account_day(spec, part_day, actions, socs, policy, seed, settings.noise)
    result.relaxations = relaxations
    if policy in LEARNING_POLICIES:
        result.metrics = compute_metrics(history)
    if learner is not None and settings.trace:
        result.expert_weights = np.array(learner.weight_trace)
    if scenario_trace:
        result.scenario_weights = np.array(scenario_trace)
    result.wall_clock = time.perf_counter() - started
    logger.info("%s on %s: cost %.2f, voltage satisfaction %.2f%%", policy, true_day.day_id,
                result.total_cost, result.voltage_satisfaction)
    return result


def run_m4(spec: MicrogridSpec, true_day: ScenarioDay, settings: Optional[SimSettings] = None,
           initial_state: Optional[SystemState] = None) -> DayResult:
    """Perfect-knowledge day optimum replayed through the same accounting as the online policies."""
    settings = settings or SimSettings()
    started = time.perf_counter()
    state = initial_state or SystemState.initial(spec)
    dg_prev = [None if np.isnan(p) else float(p) for p in state.dg_prev]
    qp = build_day_qp(spec, true_day, include_soc_cycle=True, soc_init=state.soc, dg_prev=dg_prev)
    report = solve_qp(qp, tol=settings.tol, max_iter=settings.max_iter)
    try:
        report.raise_for_status(accept_residual=1e-4)
    except SolverError as e:
        raise DayAbortedError('M4', true_day.day_id, 0, e) from e
    lay = DayLayout(spec.horizon, spec.n_ges, spec.n_dg)
    actions = lay.actions(report.x)
    socs = np.zeros((spec.horizon, spec.n_ges))
    soc = state.soc.copy()
    for r in range(spec.horizon):
        d = DispatchDecision.from_vector(actions[r], spec)
        soc = np.array([soc_transition(soc[j], d.p_charge[j], d.p_discharge[j], g, spec.pricing.dt, r + 1)
                        for j, g in enumerate(spec.ges)])
        socs[r] = soc
    result = account_day(spec, true_day, actions, socs, 'M4')
    result.wall_clock = time.perf_counter() - started
    logger.info("M4 on %s: cost %.2f", true_day.day_id, result.total_cost)
    return result


def end_state(spec: MicrogridSpec, result: DayResult) -> SystemState:
    """State after the last period of a simulated day."""
    return SystemState(t=0, soc=result.soc[-1].copy(), dg_prev=result.actions[-1, 2 * spec.n_ges:].copy(),
                       grid_prev=float(result.grid[-1]))


def run_horizon(policy: str, spec: MicrogridSpec, days: Sequence[ScenarioDay],
                library: Optional[ScenarioLibrary] = None, sequences: Optional[ExPostSequences] = None,
                settings: Optional[SimSettings] = None, seed: int = 0) -> List[DayResult]:
    """Consecutive days with SoC and generator outputs carried across midnight."""
    results = []
    state = SystemState.initial(spec)
    for day in days:
        if results:
            day = replace(day, grid_init=float(results[-1].grid[-1]))
        result = run_day(policy, spec, day, library, sequences, settings, seed, initial_state=state)
        results.append(result)
        state = end_state(spec, result)
    return results


# ---------------------------------------------------------------------------
# Synthetic OCO benchmark
# ---------------------------------------------------------------------------

@dataclass
class SyntheticInstance:
    """Separable quadratics with drifting minimizers and drifting upper limits on [-1, 1]^dim."""
    T: int
    weights: np.ndarray
    centers: np.ndarray     # (T, dim)
    limits: np.ndarray      # (T, dim)
    lo: float = -1.0
    hi: float = 1.0

    @classmethod
    def generate(cls, T: int, dim: int, seed: int, stationary: bool = False, loose: bool = False):
        rng = np.random.default_rng(seed)
        weights = rng.uniform(0.5, 2.0, dim)
        amp = rng.uniform(0.5, 1.5, dim)
        freq = rng.integers(1, 4, dim)
        phase = rng.uniform(0.0, 2 * np.pi, dim)
        lim_freq = rng.integers(1, 4, dim)
        lim_phase = rng.uniform(0.0, 2 * np.pi, dim)
        s = np.arange(1, T + 1)[:, None] / T
        if stationary:
            s = np.zeros((T, 1))
        centers = amp * np.sin(2 * np.pi * freq * s + phase)
        limits = 0.3 + 0.4 * np.sin(2 * np.pi * lim_freq * s + lim_phase)
        if loose:
            limits = np.full((T, dim), 1.5)
        return cls(T=T, weights=weights, centers=centers, limits=limits)

    def round(self, t: int) -> RevealedRound:
        c, u, w = self.centers[t - 1], self.limits[t - 1], self.weights
        dim = w.size
        return RevealedRound(cost=QuadraticCost(P=np.diag(2 * w), q=-2 * w * c, offset=float(w @ c ** 2)),
                             constraints=AffineRows(np.eye(dim), -u), box=self.box)

    @property
    def box(self) -> Box:
        dim = self.weights.size
        return Box(np.full(dim, self.lo), np.full(dim, self.hi))

    def optimum(self, t: int) -> np.ndarray:
        return np.clip(self.centers[t - 1], self.lo, np.minimum(self.hi, self.limits[t - 1]))


def synthetic_oco_benchmark(T: int, dim: int, seed: int, chi: float = 0.1, delta: float = 0.2,
                            stationary: bool = False, loose: bool = False) -> Tuple[List[RoundRecord], OcoMetrics]:
    if T < 100:
        raise ValueError(f"the synthetic benchmark needs T >= 100, got {T}")
    inst = SyntheticInstance.generate(T, dim, seed, stationary=stationary, loose=loose)
    learner = AdaptiveQueueLearner(make_schedule(T, chi, delta), np.zeros(dim), dim_g=dim,
                                   prox_solver=separable_hinge_prox)
    box = inst.box
    history = []
    for t in range(1, T + 1):
        learner.decide(t, box)
        revealed = inst.round(t)
        rec = learner.observe(t, revealed)
        rec.x_star = inst.optimum(t)
        rec.cost_star = revealed.cost(rec.x_star)
        history.append(rec)
    metrics = compute_metrics(history)
    logger.info("synthetic T=%d seed=%d: regret %.4g, hard violation %.4g", T, seed, metrics.dynamic_regret,
                metrics.vio_hard)
    return history, metrics


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

def sweep_tracking_weights(spec: MicrogridSpec, days: Sequence[ScenarioDay], library: ScenarioLibrary,
                           sequences: ExPostSequences, phi1_grid: Sequence[float], phi2_grid: Sequence[float],
                           settings: Optional[SimSettings] = None, seed: int = 0) -> pd.DataFrame:
    """M3 over a grid of tracking weights: one row per (phi1, phi2)."""
    rows = []
    for phi1 in phi1_grid:
        for phi2 in phi2_grid:
            tuned = replace(spec, pricing=replace(spec.pricing, phi1=float(phi1), phi2=float(phi2)))
            results = [run_day('M3', tuned, day, library, sequences, settings, seed) for day in days]
            rows.append({
                'phi1': float(phi1),
                'phi2': float(phi2),
                **_averages(results),
            })
    return pd.DataFrame(rows)


def _averages(results: Sequence[DayResult]) -> Dict[str, float]:
    return {
        'average_cost': float(np.mean([r.total_cost for r in results])),
        'xi1': float(np.mean([r.xi1 for r in results])),
        'xi2': float(np.mean([r.xi2 for r in results])),
        'voltage_satisfaction_percent': float(np.mean([r.voltage_satisfaction for r in results])),
    }


def benchmark_table(results: Sequence[DayResult], timing: bool = False) -> pd.DataFrame:
    """One row per policy, in the order policies first appear."""
    order: List[str] = []
    grouped: Dict[str, List[DayResult]] = {}
    for r in results:
        if r.policy not in grouped:
            order.append(r.policy)
            grouped[r.policy] = []
        grouped[r.policy].append(r)
    rows = []
    for policy in order:
        group = grouped[policy]
        row = {'policy': policy, 'days': len(group), **_averages(group)}
        if timing:
            row['wall_clock_s_per_day'] = float(np.mean([r.wall_clock or 0.0 for r in group]))
        rows.append(row)
    return pd.DataFrame(rows)

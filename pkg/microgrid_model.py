#!/usr/bin/env python3
"""
Physical and economic model of the microgrid.

Devices (generic energy storage, dispatchable generators), prices, the
linearized DistFlow network of a radial feeder, chance-bound tightening of
uncertain device limits, the cost terms and the day-long dispatch program.

Units are MW, MWh, hours and $; per-unit values appear only inside the network
layer, converted with NetworkSpec.base_mva.
"""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
import scipy.sparse as sp
from scipy import stats
from scipy.stats import qmc

from convex_solver import QuadraticProgram

logger = logging.getLogger(__name__)

PerPeriod = Union[float, Sequence[float], np.ndarray]

DEFAULT_DT = 1.0 / 12.0
DEFAULT_EPSILON = 0.05
DEFAULT_LOAD_POWER_FACTOR = 0.95
CHANCE_SAMPLES = 10 ** 6
CHANCE_SEED = 20170417

# Zero-mean, unit-variance members of each family
DISTRIBUTIONS = {
    'gaussian': stats.norm(),
    'uniform': stats.uniform(loc=-math.sqrt(3.0), scale=2.0 * math.sqrt(3.0)),
    'laplace': stats.laplace(scale=1.0 / math.sqrt(2.0)),
    'logistic': stats.logistic(scale=math.sqrt(3.0) / math.pi),
    'beta': stats.beta(2.0, 2.0, loc=-0.5 * math.sqrt(20.0), scale=math.sqrt(20.0)),
}


class ModelError(ValueError):
    """Inconsistent or out-of-range model data."""


class TopologyError(ModelError):
    """The network is not a tree rooted at the substation."""


def per_period(value: PerPeriod, T: int, name: str) -> np.ndarray:
    """Broadcast a scalar to T periods or check a sequence has exactly T entries."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(T, float(arr))
    if arr.shape != (T,):
        raise ModelError(f"{name} has {arr.size} entries but the horizon is {T}")
    return arr.copy()


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------

@dataclass
class Branch:
    parent: int
    child: int
    r: float    # p.u.
    x: float    # p.u.


@dataclass
class LinearDistFlow:
    """Sensitivities of the lossless linear DistFlow model for one network."""
    path: np.ndarray            # branches x buses, 1 where the branch feeds the bus
    r: np.ndarray
    x: np.ndarray
    sens_p: np.ndarray          # dV/d(net load P), p.u. per MW
    sens_q: np.ndarray          # dV/d(net load Q), p.u. per MVAr


@dataclass
class NetworkSpec:
    buses: List[int]
    branches: List[Branch]
    substation: int
    v_substation: float = 1.0
    v_min: float = 0.95
    v_max: float = 1.05
    base_mva: float = 10.0
    monitored: Optional[List[int]] = None
    _flow: Optional[LinearDistFlow] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        self.buses = [int(b) for b in self.buses]
        if self.monitored is None:
            self.monitored = [b for b in self.buses if b != self.substation]
        self.monitored = [int(b) for b in self.monitored]

    @property
    def bus_index(self) -> Dict[int, int]:
        return {b: i for i, b in enumerate(self.buses)}

    @property
    def monitored_index(self) -> np.ndarray:
        idx = self.bus_index
        return np.array([idx[b] for b in self.monitored], dtype=int)

    def validate(self):
        if len(set(self.buses)) != len(self.buses):
            raise TopologyError("duplicate bus ids")
        if self.substation not in self.buses:
            raise TopologyError(f"substation bus {self.substation} is not in the bus list")
        unknown = [b for b in self.monitored if b not in self.bus_index]
        if unknown:
            raise TopologyError(f"monitored buses not in the network: {unknown}")
        for br in self.branches:
            if br.r < 0 or br.x < 0:
                raise ModelError(f"branch {br.parent}-{br.child} has negative impedance")
            if br.parent not in self.bus_index or br.child not in self.bus_index:
                raise TopologyError(f"branch {br.parent}-{br.child} references an unknown bus")
        if not self.v_min < self.v_max:
            raise ModelError(f"voltage band [{self.v_min}, {self.v_max}] is empty")
        if self.base_mva <= 0 or self.v_substation <= 0:
            raise ModelError("base_mva and v_substation must be positive")
        graph = self.graph()
        if not nx.is_tree(graph):
            raise TopologyError("network must be radial (a spanning tree over its buses)")

    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(self.buses)
        for k, br in enumerate(self.branches):
            g.add_edge(br.parent, br.child, index=k)
        return g

    def linear_flow(self) -> LinearDistFlow:
        if self._flow is None:
            self.validate()
            self._flow = self._build_flow()
        return self._flow

    def _build_flow(self) -> LinearDistFlow:
        g = self.graph()
        idx = self.bus_index
        n_bus, n_br = len(self.buses), len(self.branches)
        path = np.zeros((n_br, n_bus))
        tree = nx.bfs_tree(g, self.substation)
        for k, br in enumerate(self.branches):
            # orient each branch away from the substation
            child = br.child if tree.has_edge(br.parent, br.child) else br.parent
            path[k, idx[child]] = 1.0
            for m in nx.descendants(tree, child):
                path[k, idx[m]] = 1.0
        r = np.array([br.r for br in self.branches])
        x = np.array([br.x for br in self.branches])
        scale = 1.0 / (self.v_substation * self.base_mva)
        sens_p = scale * path.T @ (r[:, None] * path)
        sens_q = scale * path.T @ (x[:, None] * path)
        return LinearDistFlow(path=path, r=r, x=x, sens_p=sens_p, sens_q=sens_q)


@dataclass
class PowerFlowResult:
    p_flow: np.ndarray      # MW per branch
    q_flow: np.ndarray      # MVAr per branch
    voltage: np.ndarray     # p.u. per bus
    grid_p: float           # MW imported at the substation
    grid_q: float


def distflow_solve(net: NetworkSpec, net_load_p: np.ndarray, net_load_q: np.ndarray) -> PowerFlowResult:
    """Branch flows and bus voltages of the lossless linear DistFlow model for per-bus net loads (MW, MVAr)."""
    flow = net.linear_flow()
    p = np.asarray(net_load_p, dtype=float)
    q = np.asarray(net_load_q, dtype=float)
    if p.shape != (len(net.buses),) or q.shape != p.shape:
        raise ModelError(f"expected {len(net.buses)} bus injections, got {p.shape} and {q.shape}")
    p_flow = flow.path @ p
    q_flow = flow.path @ q
    voltage = net.v_substation - flow.sens_p @ p - flow.sens_q @ q
    return PowerFlowResult(p_flow=p_flow, q_flow=q_flow, voltage=voltage,
                           grid_p=float(p.sum()), grid_q=float(q.sum()))


# ---------------------------------------------------------------------------
# Devices and pricing
# ---------------------------------------------------------------------------

@dataclass
class GesSpec:
    """Generic energy storage: a battery or a flexible load seen as virtual storage."""
    name: str
    bus: int
    capacity: float                 # MWh
    eta_c: float
    eta_d: float
    cost_charge: float              # $/MWh
    cost_discharge: float           # $/MWh
    p_charge_mu: PerPeriod
    p_discharge_mu: PerPeriod
    p_charge_sigma: PerPeriod = 0.0
    p_discharge_sigma: PerPeriod = 0.0
    soc_max_mu: PerPeriod = 0.9
    soc_max_sigma: PerPeriod = 0.0
    soc_min_mu: PerPeriod = 0.1
    soc_min_sigma: PerPeriod = 0.0
    self_discharge: float = 0.0     # fraction per interval
    baseline: PerPeriod = 0.0       # SoC drift per interval
    power_factor: float = 1.0
    soc_init: float = 0.5

    PER_PERIOD = ('p_charge_mu', 'p_discharge_mu', 'p_charge_sigma', 'p_discharge_sigma', 'soc_max_mu',
                  'soc_max_sigma', 'soc_min_mu', 'soc_min_sigma', 'baseline')

    @property
    def tan_phi(self) -> float:
        return math.sqrt(max(1.0 / self.power_factor ** 2 - 1.0, 0.0))

    def validate(self):
        if not (0 < self.eta_c <= 1 and 0 < self.eta_d <= 1):
            raise ModelError(f"GES {self.name}: efficiencies must lie in (0, 1]")
        if not 0 <= self.self_discharge < 1:
            raise ModelError(f"GES {self.name}: self-discharge must lie in [0, 1)")
        if self.capacity <= 0:
            raise ModelError(f"GES {self.name}: capacity must be positive")
        if not self.cost_charge < self.cost_discharge:
            raise ModelError(f"GES {self.name}: charge cost must be below discharge cost")
        if not 0 < self.power_factor <= 1:
            raise ModelError(f"GES {self.name}: power factor must lie in (0, 1]")
        if not 0 <= self.soc_init <= 1:
            raise ModelError(f"GES {self.name}: initial SoC must lie in [0, 1]")
        for name in ('p_charge_sigma', 'p_discharge_sigma', 'soc_max_sigma', 'soc_min_sigma'):
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise ModelError(f"GES {self.name}: {name} must be nonnegative")


@dataclass
class DgSpec:
    name: str
    bus: int
    a: float            # $/MW^2h
    b: float            # $/MWh
    c: float            # $/h
    p_min: float
    p_max: float
    ramp_up: float      # MW per interval
    ramp_down: float
    p_init: Optional[float] = None

    def validate(self):
        if self.a < 0:
            raise ModelError(f"DG {self.name}: quadratic coefficient must be nonnegative")
        if self.p_min > self.p_max:
            raise ModelError(f"DG {self.name}: p_min exceeds p_max")
        if self.ramp_up < 0 or self.ramp_down < 0:
            raise ModelError(f"DG {self.name}: ramp limits must be nonnegative")


@dataclass
class ResSpec:
    """Renewable plant; only the scenario generator reads it."""
    name: str
    bus: int
    kind: str           # 'pv' or 'wind'
    capacity: float     # MW


@dataclass
class PricingSpec:
    tou_price: PerPeriod = 100.0        # $/MWh, base profile before stochastic deviation
    c_pl1: float = 0.0                  # $/MW^2
    c_pl2: float = 0.0
    phi1: float = 1e4
    phi2: float = 1e-4
    dt: float = DEFAULT_DT
    epsilon: float = DEFAULT_EPSILON
    distribution: str = 'gaussian'
    grid_tracking_scale: float = 1000.0  # tie-line tracking measured in kW

    def validate(self):
        if not 0 < self.epsilon <= 0.5:
            raise ModelError(f"confidence level epsilon={self.epsilon} outside (0, 0.5]")
        if self.phi1 < 0 or self.phi2 < 0:
            raise ModelError("tracking weights must be nonnegative")
        if self.c_pl1 < 0 or self.c_pl2 < 0:
            raise ModelError("smoothing coefficients must be nonnegative")
        if self.dt <= 0:
            raise ModelError("interval length must be positive")
        if self.distribution not in DISTRIBUTIONS:
            raise ModelError(f"unknown distribution '{self.distribution}'")


@dataclass
class MicrogridSpec:
    network: NetworkSpec
    ges: List[GesSpec]
    dg: List[DgSpec]
    pricing: PricingSpec
    horizon: int = 288
    res: List[ResSpec] = field(default_factory=list)
    load_power_factor: float = DEFAULT_LOAD_POWER_FACTOR
    name: str = 'microgrid'

    def __post_init__(self):
        if self.horizon < 1:
            raise ModelError(f"horizon must be positive, got {self.horizon}")
        for g in self.ges:
            for attr in GesSpec.PER_PERIOD:
                setattr(g, attr, per_period(getattr(g, attr), self.horizon, f"{g.name}.{attr}"))
        self.pricing.tou_price = per_period(self.pricing.tou_price, self.horizon, 'pricing.tou_price')

    def validate(self) -> 'MicrogridSpec':
        self.network.validate()
        self.pricing.validate()
        buses = set(self.network.buses)
        for dev in [*self.ges, *self.dg, *self.res]:
            dev_validate = getattr(dev, 'validate', None)
            if dev_validate:
                dev_validate()
            if dev.bus not in buses:
                raise ModelError(f"device {dev.name} sits on unknown bus {dev.bus}")
        names = [d.name for d in [*self.ges, *self.dg, *self.res]]
        if len(set(names)) != len(names):
            raise ModelError("device names must be unique")
        if not 0 < self.load_power_factor <= 1:
            raise ModelError("load power factor must lie in (0, 1]")
        return self

    @property
    def n_ges(self) -> int:
        return len(self.ges)

    @property
    def n_dg(self) -> int:
        return len(self.dg)

    @property
    def n_x(self) -> int:
        return 2 * self.n_ges + self.n_dg

    @property
    def n_bus(self) -> int:
        return len(self.network.buses)

    @property
    def load_tan_phi(self) -> float:
        return math.tan(math.acos(self.load_power_factor))

    def decision_labels(self) -> List[str]:
        return ([f"pc_{g.name}" for g in self.ges] + [f"pd_{g.name}" for g in self.ges]
                + [f"pdg_{d.name}" for d in self.dg])


# ---------------------------------------------------------------------------
# Realizations and decisions
# ---------------------------------------------------------------------------

@dataclass
class Realization:
    t: int
    load_p: np.ndarray      # MW per bus
    load_q: np.ndarray      # MVAr per bus
    res_p: np.ndarray       # MW per bus
    price: float            # $/MWh

    def __post_init__(self):
        if np.any(self.load_p < 0) or np.any(self.res_p < 0):
            raise ModelError(f"period {self.t}: loads and RES must be nonnegative")


@dataclass
class ScenarioDay:
    """One day of per-period prices, per-bus loads and per-bus RES output."""
    day_id: str
    price: np.ndarray       # (T,)
    load: np.ndarray        # (T, buses) MW
    res: np.ndarray         # (T, buses) MW
    grid_init: Optional[float] = None

    def __post_init__(self):
        self.price = np.asarray(self.price, dtype=float)
        self.load = np.asarray(self.load, dtype=float)
        self.res = np.asarray(self.res, dtype=float)
        T = self.price.size
        if self.load.shape[0] != T or self.res.shape != self.load.shape:
            raise ModelError(f"scenario {self.day_id}: inconsistent shapes "
                             f"price {self.price.shape}, load {self.load.shape}, res {self.res.shape}")

    @property
    def horizon(self) -> int:
        return self.price.size

    def realization(self, t: int, load_tan_phi: float) -> Realization:
        """Data of period t (1-based)."""
        row = t - 1
        load = self.load[row].copy()
        return Realization(t=t, load_p=load, load_q=load * load_tan_phi, res_p=self.res[row].copy(),
                           price=float(self.price[row]))


@dataclass
class DispatchDecision:
    p_charge: np.ndarray
    p_discharge: np.ndarray
    p_dg: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.p_charge, self.p_discharge, self.p_dg])

    @classmethod
    def from_vector(cls, x: np.ndarray, spec: MicrogridSpec) -> 'DispatchDecision':
        x = np.asarray(x, dtype=float)
        if x.size != spec.n_x:
            raise ModelError(f"decision has {x.size} entries, expected {spec.n_x}")
        G = spec.n_ges
        return cls(p_charge=x[:G].copy(), p_discharge=x[G:2 * G].copy(), p_dg=x[2 * G:].copy())


@dataclass
class StageCost:
    ges: float
    grid: float
    dg: float

    @property
    def total(self) -> float:
        return self.ges + self.grid + self.dg


@dataclass
class GesBounds:
    """Chance-tightened per-period limits of one GES."""
    charge_max: np.ndarray
    discharge_max: np.ndarray
    soc_min: np.ndarray
    soc_max: np.ndarray


# ---------------------------------------------------------------------------
# Chance bounds
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def standardized_quantile(dist: str, p: float, method: str = 'monte-carlo',
                          samples: int = CHANCE_SAMPLES, seed: int = CHANCE_SEED) -> float:
    """Quantile of the zero-mean unit-variance member of a symmetric family."""
    if dist not in DISTRIBUTIONS:
        raise ModelError(f"unknown distribution '{dist}' (known: {', '.join(sorted(DISTRIBUTIONS))})")
    if p == 0.5:
        return 0.0
    frozen = DISTRIBUTIONS[dist]
    if method == 'analytic':
        return float(frozen.ppf(p))
    if method != 'monte-carlo':
        raise ModelError(f"unknown quantile method '{method}'")
    u = qmc.LatinHypercube(d=1, seed=seed).random(samples).ravel()
    return float(np.quantile(frozen.ppf(u), p))


def reformulate_chance_bound(mu, sigma, epsilon: float, side: str, dist: str = 'gaussian',
                             method: str = 'monte-carlo'):
    """
    Deterministic bound that holds with probability 1 - epsilon.

    upper: mu - F^-1(1-eps) * sigma    (an uncertain capacity the decision stays below)
    lower: mu + F^-1(1-eps) * sigma    (an uncertain floor the decision stays above)
    """
    if not 0 < epsilon <= 0.5:
        raise ModelError(f"epsilon={epsilon} outside (0, 0.5]")
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise ModelError("sigma must be nonnegative")
    q = standardized_quantile(dist, 1.0 - epsilon, method)
    if side == 'upper':
        out = np.asarray(mu, dtype=float) - q * sigma
    elif side == 'lower':
        out = np.asarray(mu, dtype=float) + q * sigma
    else:
        raise ModelError(f"side must be 'upper' or 'lower', got '{side}'")
    return float(out) if out.ndim == 0 else out


def ges_bounds(ges: GesSpec, pricing: PricingSpec) -> GesBounds:
    eps, dist = pricing.epsilon, pricing.distribution
    charge = np.maximum(reformulate_chance_bound(ges.p_charge_mu, ges.p_charge_sigma, eps, 'upper', dist), 0.0)
    discharge = np.maximum(reformulate_chance_bound(ges.p_discharge_mu, ges.p_discharge_sigma, eps, 'upper', dist),
                           0.0)
    soc_max = np.minimum(reformulate_chance_bound(ges.soc_max_mu, ges.soc_max_sigma, eps, 'upper', dist), 1.0)
    soc_min = np.maximum(reformulate_chance_bound(ges.soc_min_mu, ges.soc_min_sigma, eps, 'lower', dist), 0.0)
    bad = np.flatnonzero(soc_min > soc_max)
    if bad.size:
        raise ModelError(f"GES {ges.name}: tightened SoC band is empty from period {bad[0] + 1}")
    return GesBounds(charge_max=charge, discharge_max=discharge, soc_min=soc_min, soc_max=soc_max)


# ---------------------------------------------------------------------------
# Device and network relations
# ---------------------------------------------------------------------------

def soc_transition(soc, p_charge, p_discharge, ges: GesSpec, dt: float, t: int = 1):
    """SoC after one interval of charging/discharging from soc, period t (1-based) for the baseline drift."""
    baseline = np.asarray(ges.baseline, dtype=float)
    drift = float(baseline) if baseline.ndim == 0 else float(baseline[t - 1])
    return ((1.0 - ges.self_discharge) * soc + ges.eta_c * p_charge * dt / ges.capacity
            - p_discharge * dt / (ges.eta_d * ges.capacity) + drift)


def injection_maps(spec: MicrogridSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Matrices mapping the decision vector to per-bus net-load changes (P and Q)."""
    idx = spec.network.bus_index
    Mp = np.zeros((spec.n_bus, spec.n_x))
    Mq = np.zeros((spec.n_bus, spec.n_x))
    G = spec.n_ges
    for j, g in enumerate(spec.ges):
        m = idx[g.bus]
        Mp[m, j] += 1.0
        Mp[m, G + j] -= 1.0
        Mq[m, j] += g.tan_phi
        Mq[m, G + j] -= g.tan_phi
    for k, d in enumerate(spec.dg):
        Mp[idx[d.bus], 2 * G + k] -= 1.0
    return Mp, Mq


def net_load(spec: MicrogridSpec, x: np.ndarray, real: Realization) -> Tuple[np.ndarray, np.ndarray]:
    Mp, Mq = injection_maps(spec)
    x = np.asarray(x, dtype=float)
    return real.load_p - real.res_p + Mp @ x, real.load_q + Mq @ x


def voltage_affine(spec: MicrogridSpec, real: Realization) -> Tuple[np.ndarray, np.ndarray]:
    """(v0, J) with monitored-bus voltages V(x) = v0 + J x for this period's loads and RES."""
    net = spec.network
    flow = net.linear_flow()
    Mp, Mq = injection_maps(spec)
    mon = net.monitored_index
    v0 = net.v_substation - flow.sens_p @ (real.load_p - real.res_p) - flow.sens_q @ real.load_q
    J = -(flow.sens_p @ Mp + flow.sens_q @ Mq)
    return v0[mon], J[mon]


def tie_line_power(x, real: Realization, spec: MicrogridSpec) -> float:
    """Substation import (MW, positive into the microgrid)."""
    if isinstance(x, DispatchDecision):
        d = x
    else:
        d = DispatchDecision.from_vector(x, spec)
    return float(real.load_p.sum() - real.res_p.sum() - d.p_dg.sum() - (d.p_discharge - d.p_charge).sum())


def stage_cost(x, real: Realization, pricing: PricingSpec, spec: MicrogridSpec) -> StageCost:
    d = x if isinstance(x, DispatchDecision) else DispatchDecision.from_vector(x, spec)
    dt = pricing.dt
    c_ges = sum((g.cost_discharge * pd + g.cost_charge * pc) * dt
                for g, pc, pd in zip(spec.ges, d.p_charge, d.p_discharge))
    c_grid = real.price * tie_line_power(d, real, spec) * dt
    c_dg = sum((g.a * p ** 2 + g.b * p + g.c) * dt for g, p in zip(spec.dg, d.p_dg))
    return StageCost(ges=float(c_ges), grid=float(c_grid), dg=float(c_dg))


def smoothing_penalty(grid_seq: Sequence[float], p_0: Optional[float], c_pl1: float, c_pl2: float) -> float:
    seq = np.asarray(grid_seq, dtype=float)
    if seq.size < 1:
        raise ValueError("tie-line sequence must not be empty")
    first = seq[0] if p_0 is None else p_0
    diffs = np.diff(np.concatenate([[first], seq]))
    return float(c_pl1 * np.sum(diffs ** 2) + c_pl2 * np.sum((seq - seq.mean()) ** 2))


def fluctuation_indices(grid_seq: Sequence[float]) -> Tuple[float, float]:
    """Mean absolute step and mean absolute deviation from the day mean."""
    seq = np.asarray(grid_seq, dtype=float)
    if seq.size < 2:
        raise ValueError("fluctuation indices need at least two periods")
    xi1 = float(np.abs(np.diff(seq)).sum() / (seq.size - 1))
    xi2 = float(np.abs(seq - seq.mean()).sum() / seq.size)
    return xi1, xi2


def voltage_satisfaction(profiles, v_min: float, v_max: float) -> float:
    v = np.asarray(profiles, dtype=float)
    if v.size == 0:
        raise ValueError("no voltage samples")
    if not v_min < v_max:
        raise ValueError(f"voltage band [{v_min}, {v_max}] is empty")
    return float(100.0 * np.mean((v >= v_min) & (v <= v_max)))


# ---------------------------------------------------------------------------
# Day-long program
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DayLayout:
    """Variable positions of the day program: per period [pc, pd, pdg, soc, grid], then the mean grid."""
    T: int
    G: int
    D: int

    @property
    def block(self) -> int:
        return 3 * self.G + self.D + 1

    @property
    def size(self) -> int:
        return self.T * self.block + 1

    def pc(self, t: int, j: int) -> int:
        return t * self.block + j

    def pd(self, t: int, j: int) -> int:
        return t * self.block + self.G + j

    def dg(self, t: int, k: int) -> int:
        return t * self.block + 2 * self.G + k

    def soc(self, t: int, j: int) -> int:
        return t * self.block + 2 * self.G + self.D + j

    def grid(self, t: int) -> int:
        return t * self.block + 3 * self.G + self.D

    @property
    def grid_mean(self) -> int:
        return self.T * self.block

    def actions(self, z: np.ndarray) -> np.ndarray:
        """(T, 2G+D) decision vectors of every period."""
        blocks = np.asarray(z[:self.T * self.block]).reshape(self.T, self.block)
        return blocks[:, :2 * self.G + self.D].copy()

    def socs(self, z: np.ndarray) -> np.ndarray:
        blocks = np.asarray(z[:self.T * self.block]).reshape(self.T, self.block)
        return blocks[:, 2 * self.G + self.D:3 * self.G + self.D].copy()

    def grids(self, z: np.ndarray) -> np.ndarray:
        blocks = np.asarray(z[:self.T * self.block]).reshape(self.T, self.block)
        return blocks[:, -1].copy()


class _Rows:
    """Sparse constraint rows collected as triplets."""

    def __init__(self, n: int):
        self.n = n
        self.rows: List[int] = []
        self.cols: List[int] = []
        self.vals: List[float] = []
        self.l: List[float] = []
        self.u: List[float] = []

    def add(self, entries: Dict[int, float], lo: float, hi: float):
        r = len(self.l)
        for c, v in entries.items():
            if v != 0.0:
                self.rows.append(r)
                self.cols.append(c)
                self.vals.append(v)
        self.l.append(lo)
        self.u.append(hi)

    def matrix(self) -> sp.csc_matrix:
        return sp.csc_matrix((self.vals, (self.rows, self.cols)), shape=(len(self.l), self.n))


def build_day_qp(spec: MicrogridSpec, scenario: ScenarioDay, include_soc_cycle: bool = True,
                 soc_init: Optional[np.ndarray] = None, dg_prev: Optional[np.ndarray] = None) -> QuadraticProgram:
    """
    Day-long dispatch program over all periods of one scenario.

    Branch flows and voltages enter through the linear DistFlow sensitivities,
    so only device set points, SoC, tie-line power and the day-mean tie-line
    value are variables (see DayLayout).
    """
    T = spec.horizon
    if scenario.horizon != T:
        raise ModelError(f"scenario {scenario.day_id} has {scenario.horizon} periods, spec horizon is {T}")
    if scenario.load.shape[1] != spec.n_bus:
        raise ModelError(f"scenario {scenario.day_id} has {scenario.load.shape[1]} bus columns, "
                         f"network has {spec.n_bus}")
    G, D = spec.n_ges, spec.n_dg
    lay = DayLayout(T, G, D)
    n = lay.size
    pricing = spec.pricing
    dt = pricing.dt
    net = spec.network
    soc0 = np.array([g.soc_init for g in spec.ges]) if soc_init is None else np.asarray(soc_init, dtype=float)
    if dg_prev is None:
        dg_prev = [d.p_init for d in spec.dg]

    P_diag = np.zeros(n)
    P_off: Dict[Tuple[int, int], float] = {}
    q = np.zeros(n)
    offset = 0.0
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    rows = _Rows(n)
    bounds = [ges_bounds(g, pricing) for g in spec.ges]

    def add_square(a: int, b: Optional[int], weight: float, const: float = 0.0):
        """weight * (z_a - z_b - const)^2, with z_b absent when b is None"""
        nonlocal offset
        P_diag[a] += 2 * weight
        q[a] -= 2 * weight * const
        offset += weight * const ** 2
        if b is not None:
            P_diag[b] += 2 * weight
            q[b] += 2 * weight * const
            P_off[(a, b)] = P_off.get((a, b), 0.0) - 2 * weight

    for t in range(T):
        real = scenario.realization(t + 1, spec.load_tan_phi)
        # costs
        for j, g in enumerate(spec.ges):
            q[lay.pc(t, j)] += g.cost_charge * dt
            q[lay.pd(t, j)] += g.cost_discharge * dt
        q[lay.grid(t)] += real.price * dt
        for k, d in enumerate(spec.dg):
            P_diag[lay.dg(t, k)] += 2 * d.a * dt
            q[lay.dg(t, k)] += d.b * dt
            offset += d.c * dt

        # boxes
        for j, g in enumerate(spec.ges):
            b = bounds[j]
            lo[lay.pc(t, j)], hi[lay.pc(t, j)] = 0.0, b.charge_max[t]
            lo[lay.pd(t, j)], hi[lay.pd(t, j)] = 0.0, b.discharge_max[t]
            lo[lay.soc(t, j)], hi[lay.soc(t, j)] = b.soc_min[t], b.soc_max[t]
        for k, d in enumerate(spec.dg):
            lo[lay.dg(t, k)], hi[lay.dg(t, k)] = d.p_min, d.p_max

        # state of charge chain
        for j, g in enumerate(spec.ges):
            keep = 1.0 - g.self_discharge
            entries = {
                lay.soc(t, j): 1.0,
                lay.pc(t, j): -g.eta_c * dt / g.capacity,
                lay.pd(t, j): dt / (g.eta_d * g.capacity),
            }
            rhs = float(g.baseline[t])
            if t == 0:
                rhs += keep * soc0[j]
            else:
                entries[lay.soc(t - 1, j)] = -keep
            rows.add(entries, rhs, rhs)

        # power balance at the substation
        entries = {lay.grid(t): 1.0}
        for j in range(G):
            entries[lay.pc(t, j)] = -1.0
            entries[lay.pd(t, j)] = 1.0
        for k in range(D):
            entries[lay.dg(t, k)] = 1.0
        residual = float(real.load_p.sum() - real.res_p.sum())
        rows.add(entries, residual, residual)

        # voltage limits
        v0, J = voltage_affine(spec, real)
        for r in range(v0.size):
            entries = {}
            for c in range(spec.n_x):
                if J[r, c] != 0.0:
                    entries[t * lay.block + c] = J[r, c]
            if not entries:
                if not net.v_min <= v0[r] <= net.v_max:
                    logger.warning("period %d: bus %d voltage %.4f is outside limits and no device can move it",
                                   t + 1, net.monitored[r], v0[r])
                continue
            rows.add(entries, net.v_min - v0[r], net.v_max - v0[r])

        # ramps
        for k, d in enumerate(spec.dg):
            if t == 0:
                if dg_prev[k] is not None:
                    rows.add({lay.dg(0, k): 1.0}, dg_prev[k] - d.ramp_down, dg_prev[k] + d.ramp_up)
            else:
                rows.add({lay.dg(t, k): 1.0, lay.dg(t - 1, k): -1.0}, -d.ramp_down, d.ramp_up)

        # smoothing: first difference and deviation from the day mean
        if pricing.c_pl1 > 0:
            if t == 0:
                if scenario.grid_init is not None:
                    add_square(lay.grid(0), None, pricing.c_pl1, scenario.grid_init)
            else:
                add_square(lay.grid(t), lay.grid(t - 1), pricing.c_pl1)
        if pricing.c_pl2 > 0:
            add_square(lay.grid(t), lay.grid_mean, pricing.c_pl2)

    # mean tie-line auxiliary
    entries = {lay.grid(t): -1.0 / T for t in range(T)}
    entries[lay.grid_mean] = 1.0
    rows.add(entries, 0.0, 0.0)

    if include_soc_cycle:
        for j in range(G):
            rows.add({lay.soc(T - 1, j): 1.0}, soc0[j], soc0[j])

    P = sp.diags(P_diag, format='csc')
    if P_off:
        keys = list(P_off)
        r_idx = [a for a, _ in keys] + [b for _, b in keys]
        c_idx = [b for _, b in keys] + [a for a, _ in keys]
        vals = [P_off[k] for k in keys] * 2
        P = (P + sp.csc_matrix((vals, (r_idx, c_idx)), shape=(n, n))).tocsc()
    logger.debug("day QP for %s: %d variables, %d rows", scenario.day_id, n, len(rows.l))
    return QuadraticProgram(P=P, q=q, A=rows.matrix(), l=np.array(rows.l), u=np.array(rows.u),
                            lo=lo, hi=hi, offset=offset)

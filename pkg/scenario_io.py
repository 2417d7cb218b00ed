#!/usr/bin/env python3
"""
Scenario files, synthetic scenario generation, spec files and persistence of
the offline ex-post library.

Scenario CSV header: t,price_usd_per_mwh,load_<bus>_mw,...,res_<bus>_mw,...
Sequence CSV header: t,grid_mw,soc_<ges>,...   (plus manifest.json per directory)

Doubles are written with 17 significant digits so every file roundtrips
exactly; parsing never depends on the locale.
"""

import hashlib
import io
import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from microgrid_model import (
    DEFAULT_DT, Branch, DgSpec, GesSpec, MicrogridSpec, ModelError, NetworkSpec, PricingSpec, ResSpec,
    ScenarioDay,
)
from two_stage import ExPostEntry, ExPostSequences, ScenarioLibrary

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'
MANIFEST_NAME = 'manifest.json'


class ScenarioFormatError(ValueError):
    """A scenario file does not match the expected layout."""

    def __init__(self, path, message: str, line: Optional[int] = None, column: Optional[int] = None):
        where = str(path)
        if line is not None:
            where += f":{line}"
            if column is not None:
                where += f":{column}"
        super().__init__(f"{where}: {message}")
        self.path, self.line, self.column = str(path), line, column


class StaleLibraryError(RuntimeError):
    """Stored offline results do not belong to the current spec or are incomplete."""


class ConfigError(ValueError):
    """Invalid configuration file."""


# ---------------------------------------------------------------------------
# File helpers
# ---------------------------------------------------------------------------

def atomic_write_text(path, text: str):
    """Write via a temporary file in the same directory and rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=str(path.parent))
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def frame_to_csv(df: pd.DataFrame) -> str:
    buf = io.StringIO()
    df.to_csv(buf, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    return buf.getvalue()


def _json_default(value):
    if isinstance(value, (np.ndarray, np.generic)):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


def dumps_json(data) -> str:
    return json.dumps(data, indent=2, default=_json_default) + '\n'


# ---------------------------------------------------------------------------
# Scenario files
# ---------------------------------------------------------------------------

def scenario_columns(spec: MicrogridSpec) -> List[str]:
    buses = spec.network.buses
    return (['t', 'price_usd_per_mwh'] + [f"load_{b}_mw" for b in buses] + [f"res_{b}_mw" for b in buses])


def write_scenario(day: ScenarioDay, path, spec: MicrogridSpec):
    buses = spec.network.buses
    data = {'t': np.arange(1, day.horizon + 1), 'price_usd_per_mwh': day.price}
    for i, b in enumerate(buses):
        data[f"load_{b}_mw"] = day.load[:, i]
    for i, b in enumerate(buses):
        data[f"res_{b}_mw"] = day.res[:, i]
    atomic_write_text(path, frame_to_csv(pd.DataFrame(data, columns=scenario_columns(spec))))


def _read_numeric(path) -> Tuple[pd.DataFrame, np.ndarray]:
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as e:
        raise ScenarioFormatError(path, f"malformed CSV ({e})") from e
    except pd.errors.EmptyDataError as e:
        raise ScenarioFormatError(path, "file is empty") from e
    values = np.empty(raw.shape)
    for j, col in enumerate(raw.columns):
        cells = raw[col].str.strip()
        parsed = pd.to_numeric(cells, errors='coerce')
        bad = np.flatnonzero(parsed.isna().to_numpy())
        if bad.size:
            row = int(bad[0])
            raise ScenarioFormatError(path, f"column '{col}' has non-numeric value '{raw[col].iloc[row]}'",
                                      line=row + 2, column=j + 1)
        # correctly rounded parse so written files reload bit for bit
        values[:, j] = np.array([float(c) for c in cells], dtype=float)
    return raw, values


def read_scenario(path, spec: MicrogridSpec, day_id: Optional[str] = None) -> ScenarioDay:
    path = Path(path)
    raw, values = _read_numeric(path)
    header = list(raw.columns)
    expected = scenario_columns(spec)
    missing = [c for c in expected if c not in header]
    if missing:
        raise ScenarioFormatError(path, f"header is missing column '{missing[0]}'", line=1)
    extra = [c for c in header if c not in expected]
    if extra:
        raise ScenarioFormatError(path, f"unexpected column '{extra[0]}'", line=1)
    col = {c: header.index(c) for c in header}
    T = values.shape[0]
    if not np.array_equal(values[:, col['t']], np.arange(1, T + 1)):
        raise ScenarioFormatError(path, "column 't' must count periods 1..T")
    negative = np.argwhere(values[:, [col[c] for c in expected[2:]]] < 0)
    if negative.size:
        r, c = negative[0]
        raise ScenarioFormatError(path, f"negative value in '{expected[2 + c]}'", line=int(r) + 2,
                                  column=col[expected[2 + c]] + 1)
    buses = spec.network.buses
    load = values[:, [col[f"load_{b}_mw"] for b in buses]]
    res = values[:, [col[f"res_{b}_mw"] for b in buses]]
    return ScenarioDay(day_id=day_id or path.stem, price=values[:, col['price_usd_per_mwh']], load=load, res=res)


def save_library(library: ScenarioLibrary, directory, spec: MicrogridSpec):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for day in library:
        write_scenario(day, directory / f"{day.day_id}.csv", spec)


def load_library(directory, spec: MicrogridSpec) -> ScenarioLibrary:
    """Read every scenario CSV in a directory (sorted by name) and check they share the spec's horizon."""
    directory = Path(directory)
    files = sorted(directory.glob('*.csv'))
    if not files:
        raise ScenarioFormatError(directory, "no scenario files found")
    days = []
    first = None
    for path in files:
        day = read_scenario(path, spec)
        if first is None:
            first = (path, day.horizon)
        elif day.horizon != first[1]:
            raise ScenarioFormatError(path, f"has {day.horizon} rows but {first[0].name} has {first[1]}")
        days.append(day)
    if first[1] != spec.horizon:
        raise ScenarioFormatError(first[0], f"has {first[1]} rows, expected {spec.horizon} periods")
    logger.info("loaded %d scenarios from %s", len(days), directory)
    return ScenarioLibrary.from_days(days)


def library_hash(library: ScenarioLibrary) -> str:
    h = hashlib.sha256()
    for day in library:
        h.update(day.day_id.encode('utf-8'))
        for arr in (day.price, day.load, day.res):
            h.update(np.ascontiguousarray(arr, dtype='<f8').tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Spec files
# ---------------------------------------------------------------------------

def _jsonable(value):
    if isinstance(value, np.ndarray):
        flat = value.ravel()
        if flat.size and np.all(flat == flat[0]):
            return float(flat[0])
        return [float(v) for v in flat]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _dataclass_dict(obj) -> dict:
    return {f.name: _jsonable(getattr(obj, f.name)) for f in fields(obj) if f.init and not f.name.startswith('_')}


def build_dataclass(cls, data, where: str):
    """Instantiate cls from a JSON object, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"'{where}' must be an object")
    names = {f.name for f in fields(cls) if f.init and not f.name.startswith('_')}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key '{where}.{unknown[0]}'")
    try:
        return cls(**data)
    except TypeError as e:
        raise ConfigError(f"'{where}': {e}") from e


SPEC_KEYS = ('name', 'horizon', 'load_power_factor', 'network', 'devices', 'pricing')


def spec_to_dict(spec: MicrogridSpec) -> dict:
    net = spec.network
    network = _dataclass_dict(net)
    network['branches'] = [_dataclass_dict(b) for b in net.branches]
    return {
        'name': spec.name,
        'horizon': spec.horizon,
        'load_power_factor': spec.load_power_factor,
        'network': network,
        'devices': {
            'ges': [_dataclass_dict(g) for g in spec.ges],
            'dg': [_dataclass_dict(d) for d in spec.dg],
            'res': [_dataclass_dict(r) for r in spec.res],
        },
        'pricing': _dataclass_dict(spec.pricing),
    }


def spec_from_dict(data: dict) -> MicrogridSpec:
    """Build and validate a MicrogridSpec from the spec sections of a config object."""
    try:
        network = dict(data.get('network') or {})
        branches = [build_dataclass(Branch, b, f"network.branches[{i}]")
                    for i, b in enumerate(network.pop('branches', []))]
        net = build_dataclass(NetworkSpec, {**network, 'branches': branches}, 'network')
        devices = data.get('devices') or {}
        unknown = sorted(set(devices) - {'ges', 'dg', 'res'})
        if unknown:
            raise ConfigError(f"unknown key 'devices.{unknown[0]}'")
        ges = [build_dataclass(GesSpec, g, f"devices.ges[{i}]") for i, g in enumerate(devices.get('ges', []))]
        dg = [build_dataclass(DgSpec, d, f"devices.dg[{i}]") for i, d in enumerate(devices.get('dg', []))]
        res = [build_dataclass(ResSpec, r, f"devices.res[{i}]") for i, r in enumerate(devices.get('res', []))]
        pricing = build_dataclass(PricingSpec, data.get('pricing') or {}, 'pricing')
        spec = MicrogridSpec(network=net, ges=ges, dg=dg, res=res, pricing=pricing,
                             horizon=int(data.get('horizon', 288)),
                             load_power_factor=float(data.get('load_power_factor', 0.95)),
                             name=str(data.get('name', 'microgrid')))
        return spec.validate()
    except ModelError as e:
        raise ConfigError(str(e)) from e


def spec_hash(spec: MicrogridSpec) -> str:
    canonical = json.dumps(spec_to_dict(spec), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def load_spec(path) -> MicrogridSpec:
    try:
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    return spec_from_dict({k: v for k, v in data.items() if k in SPEC_KEYS})


def save_spec(spec: MicrogridSpec, path):
    atomic_write_text(path, dumps_json(spec_to_dict(spec)))


# ---------------------------------------------------------------------------
# Ex-post library persistence
# ---------------------------------------------------------------------------

def read_manifest(directory) -> Optional[dict]:
    path = Path(directory) / MANIFEST_NAME
    if not path.exists():
        return None
    with open(path, encoding='utf-8') as f:
        return json.load(f)


def persist_sequences(sequences: ExPostSequences, directory, spec_digest: str,
                      library_digest: Optional[str] = None, solver: Optional[dict] = None):
    """One CSV per scenario, then the manifest (written last so a partial run never looks complete)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    listed = []
    for e in sequences.entries:
        data = {'t': np.arange(1, e.grid.size + 1), 'grid_mw': e.grid}
        for j, name in enumerate(sequences.ges_names):
            data[f"soc_{name}"] = e.soc[:, j]
        filename = f"{e.scenario_id}.csv"
        atomic_write_text(directory / filename, frame_to_csv(pd.DataFrame(data)))
        listed.append({'id': e.scenario_id, 'file': filename, 'cost': float(e.cost)})
    manifest = {
        'spec_hash': spec_digest,
        'library_hash': library_digest,
        'solver': solver or {},
        'ges': list(sequences.ges_names),
        'scenarios': listed,
    }
    atomic_write_text(directory / MANIFEST_NAME, dumps_json(manifest))
    logger.info("persisted %d ex-post sequences to %s", len(listed), directory)


def load_sequences(directory, spec_digest: Optional[str] = None) -> ExPostSequences:
    directory = Path(directory)
    manifest = read_manifest(directory)
    if manifest is None:
        raise StaleLibraryError(f"no ex-post library in {directory}; run the offline stage first")
    if spec_digest is not None and manifest.get('spec_hash') != spec_digest:
        raise StaleLibraryError(f"ex-post library in {directory} was built for a different spec; "
                                f"re-run the offline stage with --force")
    names = manifest['ges']
    entries = []
    for item in manifest['scenarios']:
        path = directory / item['file']
        if not path.exists():
            raise StaleLibraryError(f"ex-post sequence for scenario {item['id']} is missing ({path})")
        df = pd.read_csv(path, float_precision='round_trip')
        soc = df[[f"soc_{n}" for n in names]].to_numpy(dtype=float) if names else np.zeros((len(df), 0))
        entries.append(ExPostEntry(scenario_id=item['id'], soc=soc, grid=df['grid_mw'].to_numpy(dtype=float),
                                   cost=float(item['cost'])))
    return ExPostSequences(entries=entries, ges_names=list(names))


# ---------------------------------------------------------------------------
# Synthetic scenarios
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    days: int = 20
    test_days: int = 5
    seed: int = 2024
    load_mean_mw: float = 5.0
    load_weights: Optional[Dict[str, float]] = None     # bus id -> share; default uniform off the substation
    morning_peak_hour: float = 10.0
    evening_peak_hour: float = 19.0
    volatility: float = 0.05
    res_volatility: float = 0.15
    wind_mean: float = 0.35
    wind_autocorr: float = 0.97
    pv_peak_hour: float = 12.5
    pv_width_hours: float = 2.5
    price_tiers: List[float] = field(default_factory=lambda: [50.0, 90.0, 140.0])
    peak_hours: List[List[float]] = field(default_factory=lambda: [[10.0, 15.0], [18.0, 21.0]])
    valley_hours: List[List[float]] = field(default_factory=lambda: [[0.0, 7.0], [23.0, 24.0]])
    price_deviation: float = 0.15

    def validate(self) -> 'SynthConfig':
        if self.days < 1 or self.test_days < 1:
            raise ConfigError("synthetic.days and synthetic.test_days must be >= 1")
        if min(self.volatility, self.res_volatility, self.price_deviation) < 0:
            raise ConfigError("volatility levels must be nonnegative")
        if not 0 <= self.wind_autocorr < 1:
            raise ConfigError("synthetic.wind_autocorr must lie in [0, 1)")
        return self


def period_hours(T: int, dt: float) -> np.ndarray:
    return (np.arange(T) + 0.5) * dt


def tou_profile(T: int, dt: float, cfg: SynthConfig) -> np.ndarray:
    """Three-tier time-of-use price: valley, flat, peak."""
    valley, flat, peak = cfg.price_tiers
    h = period_hours(T, dt) % 24.0
    price = np.full(T, float(flat))
    for lo, hi in cfg.valley_hours:
        price[(h >= lo) & (h < hi)] = valley
    for lo, hi in cfg.peak_hours:
        price[(h >= lo) & (h < hi)] = peak
    return price


def _ar1(rng: np.random.Generator, T: int, phi: float, sd: float) -> np.ndarray:
    e = rng.standard_normal(T)
    out = np.empty(T)
    out[0] = sd * e[0]
    k = sd * math.sqrt(1.0 - phi ** 2)
    for t in range(1, T):
        out[t] = phi * out[t - 1] + k * e[t]
    return out


def _load_shape(hours: np.ndarray, cfg: SynthConfig) -> np.ndarray:
    h = hours % 24.0
    shape = (0.6 + 0.35 * np.exp(-0.5 * ((h - cfg.morning_peak_hour) / 2.0) ** 2)
             + 0.5 * np.exp(-0.5 * ((h - cfg.evening_peak_hour) / 2.0) ** 2))
    return shape / shape.mean()


def _bus_weights(cfg: SynthConfig, spec: MicrogridSpec) -> np.ndarray:
    buses = spec.network.buses
    if cfg.load_weights is None:
        w = np.array([0.0 if b == spec.network.substation else 1.0 for b in buses])
    else:
        unknown = [k for k in cfg.load_weights if int(k) not in spec.network.bus_index]
        if unknown:
            raise ConfigError(f"synthetic.load_weights names unknown bus {unknown[0]}")
        w = np.array([float(cfg.load_weights.get(str(b), 0.0)) for b in buses])
    if w.sum() <= 0:
        raise ConfigError("synthetic load weights must have a positive sum")
    return w / w.sum()


def generate_synthetic(cfg: SynthConfig, spec: MicrogridSpec, days: Optional[int] = None,
                       seed: Optional[int] = None, prefix: str = 'hist') -> ScenarioLibrary:
    """
    Days of diurnal load, PV bell curves, autocorrelated wind and deviated
    time-of-use prices, deterministic in (seed, day index).
    """
    cfg.validate()
    days = cfg.days if days is None else days
    seed = cfg.seed if seed is None else seed
    T, dt = spec.horizon, spec.pricing.dt
    hours = period_hours(T, dt)
    shape = _load_shape(hours, cfg)
    weights = _bus_weights(cfg, spec)
    idx = spec.network.bus_index
    B = len(spec.network.buses)
    v, rv = cfg.volatility, cfg.res_volatility
    h = hours % 24.0
    bell = np.exp(-0.5 * ((h - cfg.pv_peak_hour) / cfg.pv_width_hours) ** 2)
    bell[(h < 5.0) | (h > 20.0)] = 0.0

    out = []
    for s in range(days):
        rng = np.random.default_rng([seed, s])
        level = 1.0 + np.clip(v * rng.standard_normal(), -3 * v, 3 * v)
        wiggle = np.clip(_ar1(rng, T, 0.9, v), -3 * v, 3 * v)
        total = cfg.load_mean_mw * shape * level * (1.0 + wiggle)
        spread = 1.0 + np.clip(0.5 * v * rng.standard_normal((T, B)), -1.5 * v, 1.5 * v)
        load = np.maximum(total[:, None] * weights[None, :] * spread, 0.0)

        res = np.zeros((T, B))
        for r in spec.res:
            if r.kind == 'pv':
                clearness = 1.0 - np.clip(abs(rv * rng.standard_normal()), 0.0, 0.6)
                flicker = np.clip(_ar1(rng, T, 0.8, rv), -3 * rv, 3 * rv)
                series = r.capacity * bell * clearness * (1.0 + flicker)
            elif r.kind == 'wind':
                latent = cfg.wind_mean + _ar1(rng, T, cfg.wind_autocorr, 2.0 * rv)
                series = r.capacity * latent
            else:
                raise ConfigError(f"unknown RES kind '{r.kind}' for {r.name}")
            res[:, idx[r.bus]] += np.clip(series, 0.0, r.capacity)

        deviation = rng.uniform(-cfg.price_deviation, cfg.price_deviation, T)
        price = spec.pricing.tou_price * (1.0 + deviation)
        out.append(ScenarioDay(day_id=f"{prefix}_{s:03d}", price=price, load=load, res=res))
    logger.info("generated %d synthetic days (seed %d)", days, seed)
    return ScenarioLibrary.from_days(out)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------

# (parent, child, R ohm, X ohm, child load kW) of the 33-bus radial feeder
IEEE33_BRANCHES = [
    (1, 2, 0.0922, 0.0470, 100), (2, 3, 0.4930, 0.2511, 90), (3, 4, 0.3660, 0.1864, 120),
    (4, 5, 0.3811, 0.1941, 60), (5, 6, 0.8190, 0.7070, 60), (6, 7, 0.1872, 0.6188, 200),
    (7, 8, 0.7114, 0.2351, 200), (8, 9, 1.0300, 0.7400, 60), (9, 10, 1.0440, 0.7400, 60),
    (10, 11, 0.1966, 0.0650, 45), (11, 12, 0.3744, 0.1238, 60), (12, 13, 1.4680, 1.1550, 60),
    (13, 14, 0.5416, 0.7129, 120), (14, 15, 0.5910, 0.5260, 60), (15, 16, 0.7463, 0.5450, 60),
    (16, 17, 1.2890, 1.7210, 60), (17, 18, 0.7320, 0.5740, 90), (2, 19, 0.1640, 0.1565, 90),
    (19, 20, 1.5042, 1.3554, 90), (20, 21, 0.4095, 0.4784, 90), (21, 22, 0.7089, 0.9373, 90),
    (3, 23, 0.4512, 0.3083, 90), (23, 24, 0.8980, 0.7091, 420), (24, 25, 0.8960, 0.7011, 420),
    (6, 26, 0.2030, 0.1034, 60), (26, 27, 0.2842, 0.1447, 60), (27, 28, 1.0590, 0.9337, 60),
    (28, 29, 0.8042, 0.7006, 120), (29, 30, 0.5075, 0.2585, 200), (30, 31, 0.9744, 0.9630, 150),
    (31, 32, 0.3105, 0.3619, 210), (32, 33, 0.3410, 0.5302, 60),
]
IEEE33_KV = 12.66
IEEE33_MVA = 10.0


def ieee33_load_weights() -> Dict[str, float]:
    return {str(child): float(kw) for _, child, _, _, kw in IEEE33_BRANCHES}


def ieee33_microgrid(horizon: int = 288, impedance_scale: float = 0.25,
                     synth: Optional[SynthConfig] = None) -> MicrogridSpec:
    """33-bus feeder with two storage units, two generators, PV and wind, sized around a 5 MW load."""
    synth = synth or SynthConfig()
    z_base = IEEE33_KV ** 2 / IEEE33_MVA
    branches = [Branch(parent=p, child=c, r=impedance_scale * r / z_base, x=impedance_scale * x / z_base)
                for p, c, r, x, _ in IEEE33_BRANCHES]
    network = NetworkSpec(buses=list(range(1, 34)), branches=branches, substation=1, base_mva=IEEE33_MVA)
    ges = [
        GesSpec(name='es', bus=30, capacity=2.8, eta_c=0.95, eta_d=0.95, cost_charge=2.0, cost_discharge=5.0,
                p_charge_mu=1.4, p_discharge_mu=1.4, p_charge_sigma=0.05, p_discharge_sigma=0.05,
                soc_max_mu=0.9, soc_max_sigma=0.02, soc_min_mu=0.1, soc_min_sigma=0.02, power_factor=0.95),
        GesSpec(name='ves', bus=25, capacity=1.4, eta_c=0.98, eta_d=0.98, cost_charge=1.0, cost_discharge=8.0,
                p_charge_mu=0.7, p_discharge_mu=0.7, p_charge_sigma=0.05, p_discharge_sigma=0.05,
                soc_max_mu=0.9, soc_max_sigma=0.02, soc_min_mu=0.1, soc_min_sigma=0.02,
                self_discharge=0.0005, power_factor=0.95),
    ]
    dg = [
        DgSpec(name='dg1', bus=18, a=20.0, b=60.0, c=10.0, p_min=0.1, p_max=1.5, ramp_up=0.1, ramp_down=0.1,
               p_init=0.1),
        DgSpec(name='dg2', bus=33, a=25.0, b=65.0, c=8.0, p_min=0.1, p_max=1.0, ramp_up=0.08, ramp_down=0.08,
               p_init=0.1),
    ]
    res = [ResSpec(name='pv', bus=13, kind='pv', capacity=1.3), ResSpec(name='wt', bus=29, kind='wind', capacity=2.3)]
    dt = DEFAULT_DT
    pricing = PricingSpec(tou_price=tou_profile(horizon, dt, synth), c_pl1=50.0, c_pl2=1.0, dt=dt)
    return MicrogridSpec(network=network, ges=ges, dg=dg, res=res, pricing=pricing, horizon=horizon,
                         name='ieee33').validate()


def tiny_microgrid(horizon: int = 2) -> MicrogridSpec:
    """Three-bus chain with one storage unit, one generator and a PV plant."""
    network = NetworkSpec(buses=[1, 2, 3], substation=1, base_mva=1.0,
                          branches=[Branch(1, 2, 0.01, 0.01), Branch(2, 3, 0.01, 0.01)])
    ges = [GesSpec(name='es', bus=3, capacity=0.5, eta_c=0.9, eta_d=0.9, cost_charge=1.0, cost_discharge=4.0,
                   p_charge_mu=0.3, p_discharge_mu=0.3, soc_max_mu=0.9, soc_min_mu=0.1)]
    dg = [DgSpec(name='dg', bus=2, a=10.0, b=30.0, c=5.0, p_min=0.0, p_max=0.5, ramp_up=0.2, ramp_down=0.2)]
    res = [ResSpec(name='pv', bus=3, kind='pv', capacity=0.4)]
    pricing = PricingSpec(tou_price=100.0, c_pl1=1.0, c_pl2=1.0)
    return MicrogridSpec(network=network, ges=ges, dg=dg, res=res, pricing=pricing, horizon=horizon,
                         name='tiny').validate()

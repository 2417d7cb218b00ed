#!/usr/bin/env python3
"""
Microgrid Dispatch - batch front door for prediction-free two-stage dispatch.

Verbs:
  generate      write a template config plus synthetic history/test libraries
  offline       solve every historical day in hindsight and store the sequences
  simulate      run policies over test days, one JSON result and CSV trajectory each
  benchmark     policy comparison table (average cost, fluctuation, voltage security)
  regret-bench  synthetic online-learning benchmark with log-log slope gate
  sensitivity   sweep the tracking weights of the reference-tracking policy
"""

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from convex_solver import DEFAULT_MAX_ITER, DEFAULT_TOL, SolverError
from dispatch_sim import (
    POLICIES, REFERENCE_POLICIES, DayAbortedError, DayResult, SimSettings, benchmark_table, normalize_policy,
    run_day, sweep_tracking_weights, synthetic_oco_benchmark,
)
from microgrid_model import MicrogridSpec
from oco_core import DEFAULT_CHI, DEFAULT_DELTA, loglog_slope, make_schedule
from scenario_io import (
    SPEC_KEYS, ConfigError, StaleLibraryError, SynthConfig, atomic_write_text, build_dataclass, dumps_json,
    frame_to_csv, generate_synthetic, ieee33_load_weights, ieee33_microgrid, library_hash, load_library,
    load_sequences, persist_sequences, read_manifest, save_library, spec_from_dict, spec_hash, spec_to_dict,
    tiny_microgrid,
)
from two_stage import DEFAULT_TAU, ExPostError, ScenarioLibrary, solve_library

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_GATE = 3

WORKERS_ENV = 'MG_DISPATCH_WORKERS'


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class OcoSection:
    chi: float = DEFAULT_CHI
    delta: float = DEFAULT_DELTA
    regret: bool = False        # per-round benchmark solves for dynamic regret
    trace: bool = False         # expert and scenario weight CSVs


@dataclass
class ReferenceSection:
    tau: float = DEFAULT_TAU


@dataclass
class NoiseSection:
    levels: List[float] = field(default_factory=lambda: [0.0])


@dataclass
class SolverSection:
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    relax: bool = True


@dataclass
class PathsSection:
    history: str = 'data/history'
    test: str = 'data/test'
    expost: str = 'data/expost'
    out: str = 'results'


@dataclass
class BenchmarkSection:
    policies: List[str] = field(default_factory=lambda: list(POLICIES))
    days: Optional[List[str]] = None        # test day ids, all when null
    replicates: int = 1
    horizons: List[int] = field(default_factory=lambda: [1000, 4000, 16000])
    dim: int = 4
    regret_seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    stationary: bool = False
    loose: bool = False
    phi1_grid: List[float] = field(default_factory=lambda: [1e3, 1e4, 1e5])
    phi2_grid: List[float] = field(default_factory=lambda: [1e-5, 1e-4, 1e-3])


SECTIONS = {
    'oco': OcoSection,
    'reference': ReferenceSection,
    'noise': NoiseSection,
    'solver': SolverSection,
    'paths': PathsSection,
    'benchmark': BenchmarkSection,
    'synthetic': SynthConfig,
}


@dataclass
class RunConfig:
    spec: MicrogridSpec
    oco: OcoSection
    reference: ReferenceSection
    noise: NoiseSection
    solver: SolverSection
    paths: PathsSection
    benchmark: BenchmarkSection
    synthetic: SynthConfig
    base_dir: Path = Path('.')

    def path(self, name: str) -> Path:
        p = Path(getattr(self.paths, name))
        return p if p.is_absolute() else self.base_dir / p

    def settings(self, noise: float = 0.0) -> SimSettings:
        return SimSettings(chi=self.oco.chi, delta=self.oco.delta, tau=self.reference.tau, noise=noise,
                           tol=self.solver.tol, max_iter=self.solver.max_iter, relax=self.solver.relax,
                           with_regret=self.oco.regret, trace=self.oco.trace)

    def validate(self) -> 'RunConfig':
        try:
            make_schedule(self.spec.horizon, self.oco.chi, self.oco.delta)
        except ValueError as e:
            raise ConfigError(f"oco: {e}") from e
        if self.reference.tau <= 0:
            raise ConfigError(f"reference.tau must be positive, got {self.reference.tau}")
        if not self.noise.levels:
            raise ConfigError("noise.levels must list at least one level")
        if any(level < 0 for level in self.noise.levels):
            raise ConfigError(f"noise levels must be >= 0, got {self.noise.levels}")
        if self.solver.tol <= 0 or self.solver.max_iter < 1:
            raise ConfigError("solver.tol must be positive and solver.max_iter at least 1")
        if self.benchmark.replicates < 1:
            raise ConfigError("benchmark.replicates must be at least 1")
        try:
            self.benchmark.policies = [normalize_policy(p) for p in self.benchmark.policies]
        except ValueError as e:
            raise ConfigError(f"benchmark.policies: {e}") from e
        return self


def config_from_dict(data: dict, base_dir: Path = Path('.')) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(data) - set(SPEC_KEYS) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown key '{unknown[0]}'")
    if 'network' not in data:
        raise ConfigError("config has no 'network' section")
    spec = spec_from_dict({k: v for k, v in data.items() if k in SPEC_KEYS})
    sections = {name: build_dataclass(cls, data.get(name) or {}, name) for name, cls in SECTIONS.items()}
    try:
        sections['synthetic'].validate()
    except ValueError as e:
        raise ConfigError(f"synthetic: {e}") from e
    return RunConfig(spec=spec, base_dir=base_dir, **sections).validate()


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return config_from_dict(data, base_dir=path.parent)


def config_to_dict(cfg: RunConfig) -> dict:
    data = spec_to_dict(cfg.spec)
    for name in SECTIONS:
        data[name] = asdict(getattr(cfg, name))
    return data


def worker_count(requested: Optional[int]) -> int:
    if requested is not None:
        return max(1, requested)
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got '{env}'")
    return 1


def noise_label(level: float) -> str:
    return f"noise_{level:g}"


# ---------------------------------------------------------------------------
# Day runs
# ---------------------------------------------------------------------------

@dataclass
class DayJob:
    policy: str
    day_id: str
    seed: int
    noise: float


def _run_job(args):
    job, spec, library, sequences, test, settings = args
    try:
        return run_day(job.policy, spec, test.get(job.day_id), library, sequences, settings, job.seed)
    except DayAbortedError as e:
        return str(e)


def run_jobs(cfg: RunConfig, jobs: Sequence[DayJob], test: ScenarioLibrary, library: Optional[ScenarioLibrary],
             sequences, workers: int) -> List:
    """DayResult or failure message per job, in job order."""
    payload = [(job, cfg.spec, library, sequences, test, cfg.settings(job.noise)) for job in jobs]
    if workers > 1 and len(payload) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_job, payload))
    return [_run_job(p) for p in payload]


def _select_days(cfg: RunConfig, test: ScenarioLibrary, requested: Optional[Sequence[str]]) -> List[str]:
    days = list(requested or cfg.benchmark.days or test.ids)
    missing = [d for d in days if d not in test.ids]
    if missing:
        raise ConfigError(f"test days not found: {', '.join(missing)}")
    if not days:
        raise ConfigError("no test days selected")
    return days


def _load_inputs(cfg: RunConfig, policies: Sequence[str]):
    """Test library, plus the history library and ex-post sequences when a policy needs them."""
    test = load_library(cfg.path('test'), cfg.spec)
    if not any(p in REFERENCE_POLICIES for p in policies):
        return test, None, None
    history = load_library(cfg.path('history'), cfg.spec)
    expost = cfg.path('expost')
    sequences = load_sequences(expost, spec_hash(cfg.spec))
    manifest = read_manifest(expost) or {}
    if manifest.get('library_hash') not in (None, library_hash(history)):
        raise StaleLibraryError(f"ex-post library in {expost} was built from different history files; "
                                f"re-run the offline stage with --force")
    return test, history, sequences


def _guard_outputs(args, *paths: Path) -> None:
    """Refuse to replace earlier results unless --force was given."""
    if args.force:
        return
    for path in paths:
        if path.exists():
            raise ConfigError(f"{path} already exists; pass --force to overwrite")


def _split(outcomes, jobs):
    results, failures = [], []
    for job, outcome in zip(jobs, outcomes):
        if isinstance(outcome, DayResult):
            results.append(outcome)
        else:
            failures.append({'policy': job.policy, 'day_id': job.day_id, 'seed': job.seed,
                             'noise_percent': job.noise, 'error': outcome})
            print(f"⚠️  {outcome}", file=sys.stderr)
    return results, failures


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    out = Path(args.out or '.')
    config_path = out / 'config.json'
    _guard_outputs(args, config_path)
    if args.preset == 'tiny':
        synth = SynthConfig(load_mean_mw=0.8)
        spec = tiny_microgrid(horizon=args.horizon)
    else:
        synth = SynthConfig(load_weights=ieee33_load_weights())
        spec = ieee33_microgrid(horizon=args.horizon, synth=synth)
    if args.days is not None:
        synth.days = args.days
    if args.test_days is not None:
        synth.test_days = args.test_days
    if args.seed is not None:
        synth.seed = args.seed
    cfg = RunConfig(spec=spec, oco=OcoSection(), reference=ReferenceSection(), noise=NoiseSection(),
                    solver=SolverSection(), paths=PathsSection(), benchmark=BenchmarkSection(), synthetic=synth,
                    base_dir=out).validate()

    history = generate_synthetic(synth, spec, prefix='hist')
    test = generate_synthetic(synth, spec, days=synth.test_days, seed=synth.seed + 1, prefix='test')
    save_library(history, cfg.path('history'), spec)
    save_library(test, cfg.path('test'), spec)
    atomic_write_text(config_path, dumps_json(config_to_dict(cfg)))
    summary = {'config': str(config_path), 'history_days': len(history), 'test_days': len(test),
               'horizon': spec.horizon, 'preset': args.preset}
    if args.json:
        print(dumps_json(summary), end='')
    else:
        print(f"✅ wrote {config_path} with {len(history)} history and {len(test)} test days", file=sys.stderr)
    return EXIT_OK


def cmd_offline(args) -> int:
    cfg = load_config(args.config)
    history = load_library(cfg.path('history'), cfg.spec)
    expost = cfg.path('expost')
    s_hash, l_hash = spec_hash(cfg.spec), library_hash(history)
    manifest = read_manifest(expost)
    if manifest is not None and not args.force:
        if manifest.get('spec_hash') == s_hash and manifest.get('library_hash') == l_hash:
            ids = [s['id'] for s in manifest['scenarios']]
            if all((expost / s['file']).exists() for s in manifest['scenarios']):
                print(f"✅ ex-post library in {expost} is up to date ({len(ids)} scenarios)", file=sys.stderr)
                if args.json:
                    print(dumps_json({'up_to_date': True, 'scenarios': manifest['scenarios']}), end='')
                return EXIT_OK
        else:
            raise StaleLibraryError(f"ex-post library in {expost} was built for a different spec or history; "
                                    f"re-run with --force to rebuild it")

    print(f"🚀 solving {len(history)} ex-post day programs", file=sys.stderr)
    sequences = solve_library(cfg.spec, history, tol=cfg.solver.tol, max_iter=cfg.solver.max_iter,
                              workers=worker_count(args.workers))
    persist_sequences(sequences, expost, s_hash, l_hash,
                      solver={'tol': cfg.solver.tol, 'max_iter': cfg.solver.max_iter})
    rows = [{'id': e.scenario_id, 'cost': float(e.cost)} for e in sequences.entries]
    if args.json:
        print(dumps_json({'up_to_date': False, 'scenarios': rows}), end='')
    else:
        for row in rows:
            print(f"  {row['id']:<16} {row['cost']:>14.2f} $")
        print(f"✅ stored {len(rows)} ex-post sequences in {expost}", file=sys.stderr)
    return EXIT_OK


def _policies(args, cfg: RunConfig) -> List[str]:
    return [normalize_policy(p) for p in (args.policy or cfg.benchmark.policies)]


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    policies = _policies(args, cfg)
    test, history, sequences = _load_inputs(cfg, policies)
    days = _select_days(cfg, test, args.day)
    seed = args.seed if args.seed is not None else 0
    out = Path(args.out) if args.out else cfg.path('out')
    _guard_outputs(args, *(out / noise_label(level) / 'summary.json' for level in cfg.noise.levels))
    workers = worker_count(args.workers)

    summary, all_failures = [], []
    for level in cfg.noise.levels:
        jobs = [DayJob(p, d, seed, float(level)) for p in policies for d in days]
        print(f"🚀 simulating {len(policies)} policies x {len(days)} days at {level:g}% noise", file=sys.stderr)
        results, failures = _split(run_jobs(cfg, jobs, test, history, sequences, workers), jobs)
        target = out / noise_label(level)
        target.mkdir(parents=True, exist_ok=True)
        for r in results:
            stem = f"{r.policy}_{r.day_id}"
            atomic_write_text(target / f"{stem}.json", dumps_json(r.to_dict(timing=args.timing)))
            atomic_write_text(target / f"{stem}.csv", frame_to_csv(r.trajectory_frame()))
            weights = r.weights_frame()
            if weights is not None:
                atomic_write_text(target / f"{stem}_weights.csv", frame_to_csv(weights))
        level_summary = {
            'noise_percent': float(level),
            'results': [{'policy': r.policy, 'day_id': r.day_id, 'total_cost': r.total_cost,
                         'voltage_satisfaction_percent': r.voltage_satisfaction} for r in results],
            'failures': failures,
        }
        atomic_write_text(target / 'summary.json', dumps_json(level_summary))
        summary.append(level_summary)
        all_failures.extend(failures)

    if args.json:
        print(dumps_json(summary), end='')
    if all_failures:
        print(f"❌ {len(all_failures)} day runs aborted; partial results kept in {out}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"✅ results written to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = load_config(args.config)
    policies = _policies(args, cfg)
    if len(set(policies)) < 2:
        raise ConfigError(f"a benchmark compares at least 2 policies, got {policies}")
    test, history, sequences = _load_inputs(cfg, policies)
    days = _select_days(cfg, test, args.day)
    out = Path(args.out) if args.out else cfg.path('out')
    _guard_outputs(args, out / 'benchmark.csv')
    workers = worker_count(args.workers)

    tables, failures = [], []
    for level in cfg.noise.levels:
        jobs = [DayJob(p, d, args.seed + r, float(level))
                for p in policies for r in range(cfg.benchmark.replicates) for d in days]
        print(f"🚀 benchmarking {len(policies)} policies on {len(days)} days at {level:g}% noise", file=sys.stderr)
        started = time.perf_counter()
        results, failed = _split(run_jobs(cfg, jobs, test, history, sequences, workers), jobs)
        logger.info("noise %g%%: %d runs in %.1f s", level, len(jobs), time.perf_counter() - started)
        failures.extend(failed)
        if results:
            table = benchmark_table(results, timing=args.timing)
            table.insert(0, 'noise_percent', float(level))
            tables.append(table)

    out.mkdir(parents=True, exist_ok=True)
    table = pd.concat(tables, ignore_index=True) if tables else pd.DataFrame()
    atomic_write_text(out / 'benchmark.csv', frame_to_csv(table))
    if failures:
        atomic_write_text(out / 'benchmark_failures.json', dumps_json(failures))
    if args.json:
        print(dumps_json({'rows': table.to_dict(orient='records'), 'failures': failures}), end='')
    else:
        with pd.option_context('display.width', 160, 'display.max_columns', 20):
            print(table.to_string(index=False))
    if failures:
        print(f"❌ {len(failures)} day runs aborted", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"✅ benchmark table written to {out / 'benchmark.csv'}", file=sys.stderr)
    return EXIT_OK


def _slope(horizons, values) -> Optional[float]:
    """log-log slope, or None when some value is not positive (nothing to grow)."""
    if any(v <= 0 for v in values):
        return None
    return loglog_slope(horizons, values)


def cmd_regret_bench(args) -> int:
    cfg = load_config(args.config)
    bench = cfg.benchmark
    horizons = sorted(set(args.horizons or bench.horizons))
    if len(horizons) < 3:
        raise ConfigError(f"regret-bench needs a horizon grid with at least 3 points, got {horizons}")
    if horizons[0] < 100:
        raise ConfigError(f"regret-bench horizons must be >= 100, got {horizons[0]}")
    if not bench.regret_seeds:
        raise ConfigError("benchmark.regret_seeds must list at least one seed")
    chi, delta = cfg.oco.chi, cfg.oco.delta
    seeds = [args.seed + s for s in bench.regret_seeds]
    out = Path(args.out) if args.out else cfg.path('out')
    _guard_outputs(args, out / 'regret_bench.csv', out / 'regret_slopes.json')

    rows = []
    for T in horizons:
        print(f"🚀 synthetic benchmark T={T} over {len(seeds)} seeds", file=sys.stderr)
        metrics = [synthetic_oco_benchmark(T, bench.dim, seed, chi, delta, bench.stationary, bench.loose)[1]
                   for seed in seeds]
        rows.append({
            'horizon': T,
            'dynamic_regret': float(np.mean([m.dynamic_regret for m in metrics])),
            'vio_hard': float(np.mean([m.vio_hard for m in metrics])),
            'vio_soft': float(np.mean([m.vio_soft for m in metrics])),
            'path_length': float(np.mean([m.path_length for m in metrics])),
        })
    table = pd.DataFrame(rows)
    regret_limit = 0.5 + chi + 0.1
    vio_limit = 1.0 - chi / 2 + 0.1
    regret_slope = _slope(table['horizon'], table['dynamic_regret'])
    vio_slope = _slope(table['horizon'], table['vio_hard'])
    passed = ((regret_slope is None or regret_slope <= regret_limit)
              and (vio_slope is None or vio_slope <= vio_limit))
    slopes = {
        'regret_slope': regret_slope,
        'vio_hard_slope': vio_slope,
        'regret_limit': regret_limit,
        'vio_hard_limit': vio_limit,
        'passed': passed,
    }

    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / 'regret_bench.csv', frame_to_csv(table))
    atomic_write_text(out / 'regret_slopes.json', dumps_json(slopes))
    if args.json:
        print(dumps_json({'rows': rows, **slopes}), end='')
    else:
        print(table.to_string(index=False))
        print(f"regret slope {regret_slope}, hard violation slope {vio_slope}")
    if not passed:
        print(f"❌ slopes exceed the limits ({regret_limit:.2f}, {vio_limit:.2f})", file=sys.stderr)
        return EXIT_GATE
    print("✅ sublinear growth within limits", file=sys.stderr)
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    cfg = load_config(args.config)
    test, history, sequences = _load_inputs(cfg, ['M3'])
    days = [test.get(d) for d in _select_days(cfg, test, args.day)]
    seed = args.seed if args.seed is not None else 0
    out = Path(args.out) if args.out else cfg.path('out')
    _guard_outputs(args, out / 'sensitivity.csv')
    print(f"🚀 sweeping {len(cfg.benchmark.phi1_grid)}x{len(cfg.benchmark.phi2_grid)} tracking weights",
          file=sys.stderr)
    table = sweep_tracking_weights(cfg.spec, days, history, sequences, cfg.benchmark.phi1_grid,
                                   cfg.benchmark.phi2_grid, replace(cfg.settings(), with_regret=False), seed)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / 'sensitivity.csv', frame_to_csv(table))
    if args.json:
        print(dumps_json(table.to_dict(orient='records')), end='')
    else:
        print(table.to_string(index=False))
    print(f"✅ sensitivity table written to {out / 'sensitivity.csv'}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad arguments; here those are configuration errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"❌ {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-v', '--verbose', action='store_true', help='Debug logging and tracebacks on errors')
    common.add_argument('--json', action='store_true', help='Print results as JSON on stdout')
    common.add_argument('--out', help='Output directory (default: paths.out of the config)')
    common.add_argument('--workers', type=int, help=f'Worker processes (default: ${WORKERS_ENV} or 1)')
    common.add_argument('--force', action='store_true',
                        help='Overwrite existing outputs; offline also rebuilds a current library')

    parser = _Parser(
        description="Prediction-free two-stage microgrid dispatch",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Fresh setup
  python mg_dispatch.py generate --out run --preset tiny --horizon 24
  python mg_dispatch.py offline --config run/config.json

  # Online stage
  python mg_dispatch.py simulate --config run/config.json --policy M3 --policy M4
  python mg_dispatch.py benchmark --config run/config.json --seed 7 --timing
  python mg_dispatch.py sensitivity --config run/config.json --day test_000

  # Synthetic regret gate (exit 3 when the slopes are too steep)
  python mg_dispatch.py regret-bench --config run/config.json --horizons 1000 4000 16000
        """
    )
    sub = parser.add_subparsers(dest='command', required=True, parser_class=_Parser)

    p = sub.add_parser('generate', parents=[common], help='Write a template config and synthetic libraries')
    p.add_argument('--preset', choices=['ieee33', 'tiny'], default='ieee33', help='Network preset (default: ieee33)')
    p.add_argument('--horizon', type=int, default=288, help='Periods per day (default: 288)')
    p.add_argument('--days', type=int, help='History days (default: synthetic.days)')
    p.add_argument('--test-days', type=int, help='Test days (default: synthetic.test_days)')
    p.add_argument('--seed', type=int, help='Generator seed (default: synthetic.seed)')
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser('offline', parents=[common], help='Solve and store the ex-post library')
    p.add_argument('--config', required=True, help='Config JSON')
    p.set_defaults(func=cmd_offline)

    for name, func, helptext in (('simulate', cmd_simulate, 'Run policies over test days'),
                                 ('benchmark', cmd_benchmark, 'Compare policies in one table')):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument('--config', required=True, help='Config JSON')
        p.add_argument('--policy', action='append', help=f"Policy, repeatable ({', '.join(POLICIES)})")
        p.add_argument('--day', action='append', help='Test day id, repeatable (default: all)')
        p.add_argument('--seed', type=int, required=(name == 'benchmark'), help='Master seed')
        p.add_argument('--timing', action='store_true', help='Include wall-clock figures in the outputs')
        p.set_defaults(func=func)

    p = sub.add_parser('regret-bench', parents=[common], help='Synthetic online-learning benchmark')
    p.add_argument('--config', required=True, help='Config JSON')
    p.add_argument('--horizons', type=int, nargs='+', help='Horizon grid (default: benchmark.horizons)')
    p.add_argument('--seed', type=int, default=0, help='Offset added to benchmark.regret_seeds (default: 0)')
    p.set_defaults(func=cmd_regret_bench)

    p = sub.add_parser('sensitivity', parents=[common], help='Sweep the tracking weights')
    p.add_argument('--config', required=True, help='Config JSON')
    p.add_argument('--day', action='append', help='Test day id, repeatable (default: all)')
    p.add_argument('--seed', type=int, help='Master seed')
    p.set_defaults(func=cmd_sensitivity)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format='%(asctime)s %(levelname)s %(name)s: %(message)s', stream=sys.stderr)
    try:
        return args.func(args)
    except (SolverError, DayAbortedError, ExPostError, StaleLibraryError) as e:
        if args.verbose:
            logger.exception("run failed")
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, OSError) as e:
        if args.verbose:
            logger.exception("configuration failed")
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""
End-to-end tests for the mg_dispatch command line on the tiny preset.
"""

import json
import os
import sys

import pandas as pd
import pytest

sys.path.append(os.path.dirname(__file__))

from mg_dispatch import (
    EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, WORKERS_ENV, config_from_dict, load_config, main, noise_label,
    worker_count,
)
from scenario_io import MANIFEST_NAME, ConfigError, spec_to_dict, tiny_microgrid


def _generate(root, *extra):
    code = main(['generate', '--out', str(root), '--preset', 'tiny', '--horizon', '12',
                 '--days', '3', '--test-days', '2', *extra])
    assert code == EXIT_OK
    return root / 'config.json'


def _edit(config, **sections):
    data = json.loads(config.read_text())
    for name, values in sections.items():
        data.setdefault(name, {}).update(values)
    config.write_text(json.dumps(data))


@pytest.fixture
def workspace(tmp_path):
    config = _generate(tmp_path)
    assert main(['offline', '--config', str(config)]) == EXIT_OK
    return config


def _tree(directory):
    return {p.relative_to(directory).as_posix(): p.read_bytes() for p in sorted(directory.rglob('*')) if p.is_file()}


def test_generate_writes_config_and_libraries(tmp_path):
    config = _generate(tmp_path)
    cfg = load_config(config)
    assert cfg.spec.horizon == 12
    assert cfg.spec.name == 'tiny'
    assert len(list((tmp_path / 'data' / 'history').glob('*.csv'))) == 3
    assert len(list((tmp_path / 'data' / 'test').glob('*.csv'))) == 2


def test_generate_refuses_to_overwrite(tmp_path):
    _generate(tmp_path)
    assert main(['generate', '--out', str(tmp_path), '--preset', 'tiny', '--horizon', '12']) == EXIT_CONFIG
    _generate(tmp_path, '--force')


def test_offline_writes_sequences_then_takes_fast_path(workspace):
    expost = workspace.parent / 'data' / 'expost'
    assert len(list(expost.glob('*.csv'))) == 3
    manifest = expost / MANIFEST_NAME
    stamp = manifest.stat().st_mtime_ns
    before = manifest.read_bytes()
    assert main(['offline', '--config', str(workspace)]) == EXIT_OK
    assert manifest.stat().st_mtime_ns == stamp
    assert manifest.read_bytes() == before


def test_offline_stale_after_spec_change(workspace):
    _edit(workspace, pricing={'c_pl1': 7.0})
    assert main(['offline', '--config', str(workspace)]) == EXIT_RUNTIME
    assert main(['offline', '--config', str(workspace), '--force']) == EXIT_OK
    assert main(['offline', '--config', str(workspace)]) == EXIT_OK


def test_simulate_writes_result_per_policy(workspace, tmp_path):
    out = tmp_path / 'results'
    code = main(['simulate', '--config', str(workspace), '--policy', 'M3', '--policy', 'M4',
                 '--day', 'test_000', '--out', str(out)])
    assert code == EXIT_OK
    target = out / noise_label(0.0)
    for policy in ('M3', 'M4'):
        result = json.loads((target / f"{policy}_test_000.json").read_text())
        assert result['policy'] == policy
        assert result['periods'] == 12
        assert result['wall_clock_s'] is None
        traj = pd.read_csv(target / f"{policy}_test_000.csv")
        assert len(traj) == 12
        assert 'grid_mw' in traj.columns and 'soc_es' in traj.columns
    summary = json.loads((target / 'summary.json').read_text())
    assert summary['failures'] == []
    assert len(summary['results']) == 2


def test_simulate_is_byte_identical(workspace, tmp_path):
    _edit(workspace, noise={'levels': [5.0]})
    args = ['simulate', '--config', str(workspace), '--policy', 'M3', '--policy', 'M3-a', '--seed', '4']
    assert main([*args, '--out', str(tmp_path / 'a')]) == EXIT_OK
    assert main([*args, '--out', str(tmp_path / 'b')]) == EXIT_OK
    a, b = _tree(tmp_path / 'a'), _tree(tmp_path / 'b')
    assert a.keys() == b.keys() and len(a) > 0
    assert a == b


def test_noise_grid_gives_one_result_set_per_level(workspace, tmp_path):
    levels = [0.0, 10 / 3, 50 / 3]
    _edit(workspace, noise={'levels': levels})
    out = tmp_path / 'noise'
    assert main(['simulate', '--config', str(workspace), '--policy', 'M3-a', '--day', 'test_001',
                 '--out', str(out)]) == EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == sorted(noise_label(level) for level in levels)
    for level in levels:
        result = json.loads((out / noise_label(level) / 'M3-a_test_001.json').read_text())
        assert result['noise_percent'] == pytest.approx(level)


def test_reference_policy_needs_offline_stage(tmp_path):
    config = _generate(tmp_path)
    assert main(['simulate', '--config', str(config), '--policy', 'M3']) == EXIT_RUNTIME
    assert main(['simulate', '--config', str(config), '--policy', 'M3-a', '--day', 'test_000',
                 '--out', str(tmp_path / 'r')]) == EXIT_OK


def test_benchmark_table(workspace, tmp_path):
    out = tmp_path / 'bench'
    code = main(['benchmark', '--config', str(workspace), '--seed', '3', '--policy', 'M3-a', '--policy', 'M4',
                 '--out', str(out)])
    assert code == EXIT_OK
    table = pd.read_csv(out / 'benchmark.csv')
    assert list(table['policy']) == ['M3-a', 'M4']
    assert list(table['days']) == [2, 2]
    assert 'wall_clock_s_per_day' not in table.columns
    assert {'average_cost', 'xi1', 'xi2', 'voltage_satisfaction_percent'} <= set(table.columns)

    timed = tmp_path / 'timed'
    assert main(['benchmark', '--config', str(workspace), '--seed', '3', '--policy', 'M3-a', '--policy', 'M4',
                 '--timing', '--out', str(timed)]) == EXIT_OK
    assert 'wall_clock_s_per_day' in pd.read_csv(timed / 'benchmark.csv').columns


def test_results_need_force_to_be_replaced(workspace, tmp_path):
    out = tmp_path / 'again'
    args = ['benchmark', '--config', str(workspace), '--seed', '2', '--policy', 'M3-a', '--policy', 'M4',
            '--out', str(out)]
    assert main(args) == EXIT_OK
    first = (out / 'benchmark.csv').read_bytes()
    assert main(args) == EXIT_CONFIG
    assert main([*args, '--force']) == EXIT_OK
    assert (out / 'benchmark.csv').read_bytes() == first

    sens = ['sensitivity', '--config', str(workspace), '--day', 'test_000', '--out', str(out)]
    _edit(workspace, benchmark={'phi1_grid': [1e4], 'phi2_grid': [1e-4]})
    assert main(sens) == EXIT_OK
    assert main(sens) == EXIT_CONFIG
    assert main([*sens, '--force']) == EXIT_OK


def test_benchmark_argument_errors(workspace):
    assert main(['benchmark', '--config', str(workspace), '--seed', '1', '--policy', 'M4']) == EXIT_CONFIG
    assert main(['benchmark', '--config', str(workspace), '--seed', '1', '--policy', 'M5',
                 '--policy', 'M4']) == EXIT_CONFIG
    with pytest.raises(SystemExit) as err:
        main(['benchmark', '--config', str(workspace), '--policy', 'M3', '--policy', 'M4'])
    assert err.value.code == EXIT_CONFIG


def test_regret_bench_grid(workspace, tmp_path):
    assert main(['regret-bench', '--config', str(workspace), '--horizons', '100', '200']) == EXIT_CONFIG
    out = tmp_path / 'regret'
    code = main(['regret-bench', '--config', str(workspace), '--horizons', '100', '200', '400', '--out', str(out)])
    assert code in (0, 3)
    table = pd.read_csv(out / 'regret_bench.csv')
    assert list(table['horizon']) == [100, 200, 400]
    slopes = json.loads((out / 'regret_slopes.json').read_text())
    assert slopes['regret_limit'] == pytest.approx(0.7)
    assert slopes['vio_hard_limit'] == pytest.approx(1.05)
    assert slopes['passed'] == (code == 0)


def test_regret_bench_stationary_reports_no_drift(workspace, tmp_path):
    _edit(workspace, benchmark={'stationary': True, 'regret_seeds': [0]})
    out = tmp_path / 'flat'
    main(['regret-bench', '--config', str(workspace), '--horizons', '100', '200', '400', '--out', str(out)])
    table = pd.read_csv(out / 'regret_bench.csv')
    assert (table['path_length'] == 0.0).all()


def test_sensitivity_rows(workspace, tmp_path):
    _edit(workspace, benchmark={'phi1_grid': [1e4], 'phi2_grid': [1e-4, 1e-3]})
    out = tmp_path / 'sens'
    assert main(['sensitivity', '--config', str(workspace), '--day', 'test_000', '--out', str(out)]) == EXIT_OK
    table = pd.read_csv(out / 'sensitivity.csv')
    assert list(table['phi2']) == [1e-4, 1e-3]
    assert (table['phi1'] == 1e4).all()


def test_unknown_config_keys_rejected(workspace):
    data = json.loads(workspace.read_text())
    data['plotting'] = {}
    workspace.write_text(json.dumps(data))
    assert main(['offline', '--config', str(workspace)]) == EXIT_CONFIG

    data.pop('plotting')
    data['oco']['eta'] = 1.0
    with pytest.raises(ConfigError, match='oco.eta'):
        config_from_dict(data)


def test_partial_config_uses_defaults():
    cfg = config_from_dict(spec_to_dict(tiny_microgrid(horizon=12)))
    assert cfg.oco.chi == 0.1 and cfg.oco.delta == 0.2
    assert cfg.noise.levels == [0.0]
    assert cfg.benchmark.policies == ['M3', 'M3-a', 'M3-b', 'M3-c', 'M4']


def test_invalid_parameters_rejected():
    data = spec_to_dict(tiny_microgrid(horizon=12))
    with pytest.raises(ConfigError):
        config_from_dict({**data, 'oco': {'chi': 0.3, 'delta': 0.2}})
    with pytest.raises(ConfigError):
        config_from_dict({**data, 'reference': {'tau': 0.0}})
    with pytest.raises(ConfigError):
        config_from_dict({**data, 'noise': {'levels': [-1.0]}})


def test_worker_count_from_environment(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert worker_count(None) == 1
    assert worker_count(4) == 4
    monkeypatch.setenv(WORKERS_ENV, '3')
    assert worker_count(None) == 3
    monkeypatch.setenv(WORKERS_ENV, 'many')
    with pytest.raises(ConfigError):
        worker_count(None)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))

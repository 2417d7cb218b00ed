#!/usr/bin/env python3
"""
Tests for scenario files, spec files, ex-post persistence and the synthetic generator.
"""

import json
import os
import sys

import numpy as np
import pandas as pd
import pytest

sys.path.append(os.path.dirname(__file__))

from microgrid_model import ScenarioDay
from scenario_io import (
    MANIFEST_NAME, ConfigError, ScenarioFormatError, StaleLibraryError, SynthConfig, generate_synthetic,
    ieee33_microgrid, library_hash, load_library, load_sequences, load_spec, persist_sequences, read_scenario,
    save_library, save_spec, spec_from_dict, spec_hash, spec_to_dict, tiny_microgrid, tou_profile,
    write_scenario,
)
from two_stage import ExPostEntry, ExPostSequences


@pytest.fixture
def tiny():
    return tiny_microgrid(horizon=12)


def test_library_roundtrip(tmp_path, tiny):
    lib = generate_synthetic(SynthConfig(days=3), tiny)
    save_library(lib, tmp_path, tiny)
    back = load_library(tmp_path, tiny)
    assert back.ids == lib.ids
    for a, b in zip(lib, back):
        assert np.array_equal(a.price, b.price)
        assert np.array_equal(a.load, b.load)
        assert np.array_equal(a.res, b.res)
    assert library_hash(back) == library_hash(lib)
    assert not [p for p in tmp_path.iterdir() if p.name.startswith('.')]


def test_short_file_rejected(tmp_path):
    spec = tiny_microgrid(horizon=288)
    day = ScenarioDay(day_id='short', price=np.full(287, 50.0), load=np.zeros((287, 3)), res=np.zeros((287, 3)))
    write_scenario(day, tmp_path / 'short.csv', spec)
    with pytest.raises(ScenarioFormatError, match='287 rows'):
        load_library(tmp_path, spec)


def test_horizon_mismatch_names_both_files(tmp_path, tiny):
    lib = generate_synthetic(SynthConfig(days=1), tiny)
    save_library(lib, tmp_path, tiny)
    short = ScenarioDay(day_id='zz', price=np.full(5, 50.0), load=np.zeros((5, 3)), res=np.zeros((5, 3)))
    write_scenario(short, tmp_path / 'zz.csv', tiny)
    with pytest.raises(ScenarioFormatError) as err:
        load_library(tmp_path, tiny)
    assert 'zz.csv' in str(err.value) and 'hist_000.csv' in str(err.value)


def test_missing_bus_column_rejected(tmp_path, tiny):
    lib = generate_synthetic(SynthConfig(days=1), tiny)
    path = tmp_path / 'day.csv'
    write_scenario(lib.days[0], path, tiny)
    df = pd.read_csv(path).drop(columns=['load_3_mw'])
    df.to_csv(path, index=False)
    with pytest.raises(ScenarioFormatError, match='load_3_mw'):
        read_scenario(path, tiny)


def test_malformed_cell_reports_line_and_column(tmp_path):
    spec = tiny_microgrid(horizon=2)
    path = tmp_path / 'bad.csv'
    path.write_text("t,price_usd_per_mwh,load_1_mw,load_2_mw,load_3_mw,res_1_mw,res_2_mw,res_3_mw\n"
                    "1,50,0,0.5,0.3,0,0,0\n"
                    "2,50,0,abc,0.3,0,0,0\n")
    with pytest.raises(ScenarioFormatError) as err:
        read_scenario(path, spec)
    assert err.value.line == 3
    assert err.value.column == 4
    assert str(err.value).startswith(f"{path}:3:4:")


def test_negative_value_rejected(tmp_path):
    spec = tiny_microgrid(horizon=2)
    path = tmp_path / 'neg.csv'
    path.write_text("t,price_usd_per_mwh,load_1_mw,load_2_mw,load_3_mw,res_1_mw,res_2_mw,res_3_mw\n"
                    "1,50,0,0.5,0.3,0,0,0\n"
                    "2,50,0,0.5,0.3,0,0,-0.1\n")
    with pytest.raises(ScenarioFormatError, match='res_3_mw'):
        read_scenario(path, spec)


def test_generator_is_deterministic(tiny):
    a = generate_synthetic(SynthConfig(days=2, seed=11), tiny)
    b = generate_synthetic(SynthConfig(days=2, seed=11), tiny)
    c = generate_synthetic(SynthConfig(days=2, seed=12), tiny)
    for x, y in zip(a, b):
        assert np.array_equal(x.load, y.load) and np.array_equal(x.res, y.res) and np.array_equal(x.price, y.price)
    assert not np.array_equal(a.days[0].load, c.days[0].load)


def test_zero_volatility_gives_identical_days(tiny):
    cfg = SynthConfig(days=3, volatility=0.0, res_volatility=0.0, price_deviation=0.0)
    lib = generate_synthetic(cfg, tiny)
    for day in lib.days[1:]:
        assert np.array_equal(day.load, lib.days[0].load)
        assert np.array_equal(day.res, lib.days[0].res)
        assert np.array_equal(day.price, lib.days[0].price)


def test_ieee33_magnitudes():
    spec = ieee33_microgrid()
    lib = generate_synthetic(SynthConfig(days=3), spec)
    caps = {spec.network.bus_index[r.bus]: r.capacity for r in spec.res}
    for day in lib:
        assert 4.0 <= day.load.sum(axis=1).mean() <= 6.0
        assert np.all(day.load >= 0) and np.all(day.res >= 0)
        for col, cap in caps.items():
            assert day.res[:, col].max() <= cap + 1e-12
        assert np.all(day.load[:, spec.network.bus_index[spec.network.substation]] == 0.0)
    night = (np.arange(288) + 0.5) / 12.0 < 4.0
    pv_col = spec.network.bus_index[13]
    assert np.all(lib.days[0].res[night, pv_col] == 0.0)


def test_tou_profile_tiers():
    price = tou_profile(24, 1.0, SynthConfig())
    assert price[3] == 50.0
    assert price[12] == 140.0
    assert price[8] == 90.0
    assert price[19] == 140.0


def test_sequences_roundtrip(tmp_path):
    entries = [ExPostEntry(scenario_id=f"s{i}", soc=np.random.default_rng(i).uniform(0.1, 0.9, (4, 2)),
                           grid=np.random.default_rng(i + 10).normal(size=4), cost=100.0 + i) for i in range(3)]
    seqs = ExPostSequences(entries=entries, ges_names=['es', 'ves'])
    persist_sequences(seqs, tmp_path, 'abc', 'lib', {'tol': 1e-6})
    back = load_sequences(tmp_path, 'abc')
    assert back.ids == seqs.ids
    assert back.ges_names == ['es', 'ves']
    assert np.array_equal(back.soc, seqs.soc)
    assert np.array_equal(back.grid, seqs.grid)
    assert [e.cost for e in back.entries] == [100.0, 101.0, 102.0]


def test_stale_manifest_hash(tmp_path):
    seqs = ExPostSequences(entries=[ExPostEntry('s0', np.full((2, 1), 0.5), np.zeros(2), 1.0)], ges_names=['es'])
    persist_sequences(seqs, tmp_path, 'abc')
    manifest = json.loads((tmp_path / MANIFEST_NAME).read_text())
    manifest['spec_hash'] = 'tampered'
    (tmp_path / MANIFEST_NAME).write_text(json.dumps(manifest))
    with pytest.raises(StaleLibraryError, match='--force'):
        load_sequences(tmp_path, 'abc')


def test_missing_sequence_file_names_scenario(tmp_path):
    entries = [ExPostEntry(f"s{i}", np.full((2, 1), 0.5), np.zeros(2), 1.0) for i in range(2)]
    persist_sequences(ExPostSequences(entries=entries, ges_names=['es']), tmp_path, 'abc')
    (tmp_path / 's1.csv').unlink()
    with pytest.raises(StaleLibraryError, match='s1'):
        load_sequences(tmp_path, 'abc')


def test_missing_manifest(tmp_path):
    with pytest.raises(StaleLibraryError):
        load_sequences(tmp_path)


def test_spec_file_roundtrip(tmp_path):
    spec = ieee33_microgrid(horizon=24)
    save_spec(spec, tmp_path / 'spec.json')
    back = load_spec(tmp_path / 'spec.json')
    assert spec_hash(back) == spec_hash(spec)
    assert back.n_x == spec.n_x
    assert np.array_equal(back.pricing.tou_price, spec.pricing.tou_price)


def test_spec_hash_tracks_changes(tiny):
    other = tiny_microgrid(horizon=12)
    assert spec_hash(tiny) == spec_hash(other)
    other.pricing.phi1 = 5.0
    assert spec_hash(tiny) != spec_hash(other)


def test_unknown_config_key_rejected(tiny):
    data = spec_to_dict(tiny)
    data['pricing']['phi3'] = 1.0
    with pytest.raises(ConfigError, match='pricing.phi3'):
        spec_from_dict(data)
    data = spec_to_dict(tiny)
    data['devices']['batteries'] = []
    with pytest.raises(ConfigError):
        spec_from_dict(data)


def test_invalid_model_data_becomes_config_error(tiny):
    data = spec_to_dict(tiny)
    data['devices']['ges'][0]['eta_c'] = 1.5
    with pytest.raises(ConfigError):
        spec_from_dict(data)


def test_unknown_load_weight_bus(tiny):
    with pytest.raises(ConfigError):
        generate_synthetic(SynthConfig(days=1, load_weights={'99': 1.0}), tiny)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))

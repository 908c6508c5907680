#!/usr/bin/env python3
"""
Test script for the experiment preset registry
"""

import sys
import os
import json
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest

from elcd.datasets import gen_toy_linear, save_csv
from elcd.errors import ConfigError, DatasetFormatError
from elcd.experiments import DEFAULT_PRESET, ExperimentPreset, ExperimentRegistry


def test_registry_loads_bundled_presets():
    registry = ExperimentRegistry()
    names = registry.names()
    for expected in ("toy-linear", "pendulum-4d", "rosenbrock-8d", "lasa-2d"):
        assert expected in names
    assert registry.get("pendulum-8d").generator == "pendulum"


def test_unknown_preset():
    with pytest.raises(ConfigError) as info:
        ExperimentRegistry().get("lorenz")
    assert "toy-linear" in str(info.value)


def test_toy_preset_generates_and_prepares():
    preset = ExperimentRegistry().get("toy-linear")
    dataset, stats = preset.prepare(preset.generate())
    assert stats is None
    assert dataset.dimension == 2
    assert len(dataset.trajectories[0]) == 501
    assert np.array_equal(dataset.standardization.std, np.ones(2))
    spec = preset.model_spec(dataset.dimension)
    assert spec.couplings == 0 and spec.permute is False
    config = preset.train_config(seed=4)
    assert config.lr == 0.01 and config.max_steps == 2000 and config.seed == 4


def test_pendulum_preset_trims_and_standardizes():
    preset = ExperimentRegistry().get("pendulum-4d")
    preset = ExperimentPreset(**{**preset.__dict__, "config": {**preset.config, "horizon": 1.0}})
    raw = preset.generate(seed=1)
    prepared, stats = preset.prepare(raw)
    assert stats is not None
    assert len(prepared.trajectories[0]) == len(raw.trajectories[0]) - 5
    states, _ = prepared.pooled()
    assert np.allclose(states.mean(axis=0), 0.0, atol=1e-12)


def test_prepare_overrides_the_preset_defaults():
    preset = ExperimentRegistry().get("pendulum-4d")
    preset = ExperimentPreset(**{**preset.__dict__, "config": {**preset.config, "horizon": 1.0}})
    raw = preset.generate(seed=2)
    untouched, stats = preset.prepare(raw, trim=0, standardize_data=False)
    assert stats is None
    assert len(untouched.trajectories[0]) == len(raw.trajectories[0])
    assert np.array_equal(untouched.trajectories[0].states, raw.trajectories[0].states)
    trimmed, _ = preset.prepare(raw, trim=3, standardize_data=False)
    assert len(trimmed.trajectories[0]) == len(raw.trajectories[0]) - 3


def test_default_preset_for_plain_csv():
    assert DEFAULT_PRESET.generator == "csv"
    assert DEFAULT_PRESET.trim == 5 and DEFAULT_PRESET.standardize is True
    spec = DEFAULT_PRESET.model_spec(3, kind="sdd", alpha=0.5)
    assert spec.dimension == 3 and spec.kind == "sdd" and spec.alpha == 0.5
    assert DEFAULT_PRESET.train_config(seed=9).seed == 9


def test_csv_preset_reads_inputs(tmp_path):
    preset = ExperimentRegistry().get("lasa-4d")
    paths = []
    for name in ("a.csv", "b.csv"):
        path = tmp_path / name
        save_csv(gen_toy_linear(dt=0.1, horizon=1.0), path)
        paths.append(path)
    dataset = preset.generate(inputs=paths)
    assert dataset.dimension == 4
    with pytest.raises(ConfigError):
        preset.generate(inputs=paths[:1])


def test_model_spec_overrides():
    preset = ExperimentRegistry().get("toy-linear")
    spec = preset.model_spec(2, kind="ncds", couplings=1)
    assert spec.kind == "ncds" and spec.couplings == 1


def test_broken_preset_files(tmp_path):
    with pytest.raises(DatasetFormatError):
        ExperimentRegistry(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{\n  \"x\": \n")
    with pytest.raises(DatasetFormatError) as info:
        ExperimentRegistry(bad)
    assert info.value.line is not None
    unknown = tmp_path / "unknown.json"
    unknown.write_text(json.dumps({"p": {"description": "d", "generator": "weather"}}))
    with pytest.raises(ConfigError):
        ExperimentRegistry(unknown)
    malformed = tmp_path / "malformed.json"
    malformed.write_text(json.dumps({"p": {"description": "d", "generator": "csv", "colour": "red"}}))
    with pytest.raises(ConfigError):
        ExperimentRegistry(malformed)


def main():
    """Run all tests"""
    return pytest.main([__file__, "-q"])


if __name__ == "__main__":
    sys.exit(main())

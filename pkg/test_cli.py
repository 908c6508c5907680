#!/usr/bin/env python3
"""
Test script for the command line application
"""

import sys
import os
import io
import xml.etree.ElementTree as ET
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest
from rich.console import Console

from elcd.datasets import load_csv
from elcd.trainer import load_checkpoint
from elcd.ui import ConsoleUI
from main import ElcdApp, build_parser


def run(argv, level="quiet"):
    """Run one command; returns (exit status, captured console text)"""
    buffer = io.StringIO()
    app = ElcdApp(ui=ConsoleUI(Console(file=buffer, width=400), level=level))
    status = app.run([str(a) for a in argv])
    return status, buffer.getvalue()


@pytest.fixture
def workspace(tmp_path):
    """A small toy dataset and an untrained checkpoint on it"""
    data = tmp_path / "toy.csv"
    status, output = run(["gen-data", "toy-linear", "--dt", "0.1", "--horizon", "2", "--out", data])
    assert status == 0, output
    ckpt = tmp_path / "model.json"
    status, output = run(["train", "--data", data, "--epochs", "0", "--trim", "0", "--couplings", "0",
                          "--hidden", "8", "--out", ckpt])
    assert status == 0, output
    return tmp_path, data, ckpt


def test_gen_data_reports_resolved_config(tmp_path):
    out = tmp_path / "pend.csv"
    status, output = run(["gen-data", "pendulum", "--links", "2", "--trajs", "2", "--horizon", "1",
                          "--seed", "3", "--out", out])
    assert status == 0, output
    assert output.startswith("resolved: gen-data pendulum")
    assert "seed=3" in output
    dataset = load_csv(out)
    assert dataset.dimension == 4 and len(dataset) == 2


def test_list_presets():
    status, output = run(["gen-data", "--list-presets"], level="info")
    assert status == 0
    assert "toy-linear" in output and "pendulum-4d" in output


def test_compose_command(workspace):
    tmp_path, data, _ = workspace
    out = tmp_path / "four.csv"
    status, output = run(["compose", "--inputs", data, data, "--out", out])
    assert status == 0, output
    assert load_csv(out).dimension == 4


def test_train_writes_checkpoint_with_data_box(workspace):
    _, data, ckpt = workspace
    model, info = load_checkpoint(ckpt)
    assert info.spec.kind == "elcd" and info.spec.couplings == 0
    assert info.metadata["trim"] == 0 and info.metadata["standardize"] is True
    low, high = (np.asarray(v) for v in info.metadata["box"])
    assert np.all(low < high)
    assert info.standardization is not None
    assert model.equilibrium.shape == (2,)


def test_train_with_preset_takes_its_defaults(workspace):
    tmp_path, data, _ = workspace
    ckpt = tmp_path / "preset.json"
    status, output = run(["train", "--data", data, "--preset", "toy-linear", "--epochs", "0", "--hidden", "8",
                          "--out", ckpt])
    assert status == 0, output
    _, info = load_checkpoint(ckpt)
    assert info.metadata["trim"] == 0 and info.metadata["standardize"] is False
    assert info.spec.couplings == 0 and info.spec.permute is False
    assert info.train.lr == 0.01 and info.train.epochs == 0
    assert info.standardization is None


def test_train_without_preset_trims_five_rows(workspace):
    tmp_path, data, _ = workspace
    ckpt = tmp_path / "plain.json"
    status, output = run(["train", "--data", data, "--epochs", "0", "--couplings", "0", "--out", ckpt])
    assert status == 0, output
    _, info = load_checkpoint(ckpt)
    assert info.metadata["trim"] == 5 and info.metadata["standardize"] is True


def test_rollout_from_equilibrium_stays_put(workspace):
    tmp_path, _, ckpt = workspace
    model, _ = load_checkpoint(ckpt)
    x0 = ",".join(repr(float(v)) for v in model.equilibrium)
    out = tmp_path / "rollout.csv"
    status, output = run(["rollout", "--ckpt", ckpt, "--x0", x0, "--dt", "0.1", "--horizon", "1", "--out", out])
    assert status == 0, output
    states = load_csv(out).trajectories[0].states
    assert len(states) == 11
    assert np.all(states == model.equilibrium)


def test_rollout_from_data(workspace):
    tmp_path, data, ckpt = workspace
    out = tmp_path / "rollouts.csv"
    status, output = run(["rollout", "--ckpt", ckpt, "--from-data", data, "--horizon", "0.5", "--out", out])
    assert status == 0, output
    assert len(load_csv(out)) == 2


def test_eval_prints_csv_row(workspace):
    _, data, ckpt = workspace
    status, output = run(["eval", "--ckpt", ckpt, "--data", data])
    assert status == 0, output
    lines = output.splitlines()
    assert "model,dataset,mean,std,n" in lines
    row = lines[lines.index("model,dataset,mean,std,n") + 1].split(",")
    assert row[0] == "elcd" and row[1] == "toy" and row[4] == "2"
    assert float(row[2]) > 0


def test_eval_multiple_runs(workspace):
    _, data, ckpt = workspace
    status, output = run(["eval", "--ckpt", ckpt, "--data", data, "--runs", "2"])
    assert status == 0, output
    assert output.splitlines()[-1].endswith(",2")


def test_verify_equilibrium_bound(workspace):
    _, _, ckpt = workspace
    status, output = run(["verify", "--ckpt", ckpt, "--skip-metric", "--samples", "3"], level="info")
    assert status == 0, output
    assert "equilibrium bound" in output
    assert "all checks passed" in output


def test_verify_skip_metric_needs_latent_space(workspace):
    _, _, ckpt = workspace
    status, _ = run(["verify", "--ckpt", ckpt, "--skip-metric", "--space", "data"])
    assert status == 1


def test_plot_writes_svg(workspace):
    tmp_path, data, ckpt = workspace
    out = tmp_path / "phase.svg"
    status, output = run(["plot", "--data", data, "--ckpt", ckpt, "--grid", "5", "--out", out], level="info")
    assert status == 0, output
    assert "25 arrows" in output and "2 rollouts" in output
    text = out.read_text()
    assert ET.parse(out).getroot().tag.endswith("svg")
    for gid in ("demonstration-0", "demonstration-1", "rollout-0", "field", "equilibrium"):
        assert f'id="{gid}"' in text


def test_plot_without_model(workspace):
    tmp_path, data, _ = workspace
    out = tmp_path / "demos.svg"
    status, output = run(["plot", "--data", data, "--out", out], level="info")
    assert status == 0, output
    assert "0 arrows" in output
    assert 'id="field"' not in out.read_text()


@pytest.mark.parametrize("argv", [
    ["train"],
    ["gen-data", "toy-linear"],
    ["gen-data", "--preset", "no-such-preset", "--out", "x.csv"],
    ["frobnicate"],
    ["verify", "--ckpt", "missing.json"],
])
def test_bad_invocations_exit_with_usage_status(argv, tmp_path):
    status, output = run(argv)
    assert status == 1
    assert output


def test_unexpected_errors_are_not_swallowed(monkeypatch):
    def broken(self, args):
        raise RuntimeError("bug")
    monkeypatch.setattr(ElcdApp, "cmd_compose", broken)
    with pytest.raises(RuntimeError):
        run(["compose", "--inputs", "a.csv", "--out", "b.csv"])


def test_wrong_initial_state_length(workspace):
    tmp_path, _, ckpt = workspace
    status, _ = run(["rollout", "--ckpt", ckpt, "--x0", "1,2,3", "--out", tmp_path / "r.csv"])
    assert status == 1


def test_parser_defaults():
    args = build_parser().parse_args(["verify", "--ckpt", "m.json"])
    assert args.samples == 20 and args.space == "latent" and args.quad_dt == 1e-2


def main():
    """Run all tests"""
    return pytest.main([__file__, "-q"])


if __name__ == "__main__":
    sys.exit(main())

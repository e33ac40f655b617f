"""Command-line interface: all commands end-to-end on tiny inputs."""

import json

import numpy as np
import pytest
from click.testing import CliRunner

from cobot_monitor.cli import load_config, main
from cobot_monitor.core import load_dataset, save_dataset
from cobot_monitor.sim import (
    HumanSpec,
    generate_training_data,
    training_scenarios,
)

LANES = (-2.0, -1.0, 0.0, 1.0, 2.0)

SMALL_CONFIG = """
[datagen]
episodes_per_action = 2
duration = 10.0

[scenario]
duration = 30.0

[batch]
n_humans = 2
duration = 30.0
"""


@pytest.fixture(scope="module")
def runner():
    return CliRunner()


@pytest.fixture(scope="module")
def config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "config.toml"
    path.write_text(SMALL_CONFIG)
    return str(path)


@pytest.fixture(scope="module")
def dataset_file(tmp_path_factory):
    """Small crossing dataset shared by the read-only commands."""
    paths = [
        HumanSpec(start=(3.2, -4.0), goal=(3.2, 4.0), speed=1.0),
        HumanSpec(start=(3.8, 4.5), goal=(3.4, -4.0), speed=1.0),
    ]
    scenarios = training_scenarios(
        (0.0, 0.2, 0.4, 0.6, 0.8, 1.0), LANES, paths, duration=15.0
    )
    data = generate_training_data(scenarios, lanes=LANES)
    path = tmp_path_factory.mktemp("data") / "train.csv"
    save_dataset(data, path)
    return str(path)


class TestConfig:
    def test_defaults_complete(self):
        cfg = load_config(None)
        assert set(cfg) >= {"monitor", "tree", "scenario", "datagen", "batch"}

    def test_user_values_override(self, config_file):
        cfg = load_config(config_file)
        assert cfg["datagen"]["episodes_per_action"] == 2
        assert cfg["monitor"]["delta_th"] == 1.5  # untouched default


class TestDatagen:
    def test_writes_dataset(self, runner, config_file, tmp_path):
        out = tmp_path / "train.csv"
        result = runner.invoke(
            main, ["datagen", "--config", config_file, "--out", str(out)]
        )
        assert result.exit_code == 0, result.output
        data = load_dataset(out)
        assert len(data) > 0
        n_pos, n_neg = data.class_counts()
        assert n_pos > 0 and n_neg > 0

    def test_seed_reproducible(self, runner, config_file, tmp_path):
        outs = []
        for name in ("a.csv", "b.csv"):
            out = tmp_path / name
            result = runner.invoke(
                main,
                ["datagen", "--config", config_file, "--out", str(out),
                 "--seed", "3"],
            )
            assert result.exit_code == 0, result.output
            outs.append(load_dataset(out))
        assert outs[0] == outs[1]


class TestFitInspect:
    def test_prints_importance_and_dump(self, runner, dataset_file, tmp_path):
        json_out = tmp_path / "tree.json"
        result = runner.invoke(
            main,
            ["fit-inspect", "--dataset", dataset_file, "--json-out", str(json_out)],
        )
        assert result.exit_code == 0, result.output
        assert "predictor importance" in result.output
        payload = json.loads(json_out.read_text())
        assert payload["root"]["type"] in ("leaf", "internal")

    def test_empty_dataset_fails(self, runner, tmp_path):
        from cobot_monitor.core import Dataset

        empty = tmp_path / "empty.csv"
        save_dataset(Dataset(), empty)
        result = runner.invoke(main, ["fit-inspect", "--dataset", str(empty)])
        assert result.exit_code != 0


class TestExplain:
    def test_prints_rule_syntax(self, runner, dataset_file):
        alpha = ["1.2", "-1.5", "90", "1.92", "-0.9", "1.0", "0.6", "0"]
        result = runner.invoke(
            main, ["explain", "--dataset", dataset_file, "--", *alpha]
        )
        assert result.exit_code == 0, result.output
        assert "because: {" in result.output

    def test_wrong_arity(self, runner, dataset_file):
        result = runner.invoke(
            main, ["explain", "--dataset", dataset_file, "1", "2"]
        )
        assert result.exit_code != 0


class TestRun:
    def test_monitor_run_outputs(self, runner, config_file, dataset_file, tmp_path):
        out = tmp_path / "run"
        result = runner.invoke(
            main,
            ["run", "--config", config_file, "--dataset", dataset_file,
             "--out", str(out), "--seed", "0"],
        )
        assert result.exit_code == 0, result.output
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["goal_reached"]
        assert (out / "trajectory_robot.csv").exists()
        assert (out / "report.jsonl").exists()

    def test_nonreactive_policy(self, runner, config_file, dataset_file, tmp_path):
        out = tmp_path / "run_nr"
        result = runner.invoke(
            main,
            ["run", "--config", config_file, "--dataset", dataset_file,
             "--out", str(out), "--policy", "nominal-nonreactive"],
        )
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["min_distance"] < 1.5

    def test_with_updates_writes_new_dataset(
        self, runner, config_file, dataset_file, tmp_path
    ):
        out = tmp_path / "run_upd"
        updated = tmp_path / "updated.csv"
        result = runner.invoke(
            main,
            ["run", "--config", config_file, "--dataset", dataset_file,
             "--out", str(out), "--with-updates", "--dataset-out", str(updated)],
        )
        assert result.exit_code == 0, result.output
        assert updated.exists()
        assert len(load_dataset(updated)) >= len(load_dataset(dataset_file))


class TestBatch:
    def test_small_batch_summary(self, runner, config_file, dataset_file, tmp_path):
        out = tmp_path / "batch.json"
        result = runner.invoke(
            main,
            ["batch", "--config", config_file, "--dataset", dataset_file,
             "--out", str(out), "--trials", "2", "--seed", "0"],
        )
        assert result.exit_code == 0, result.output
        summary = json.loads(out.read_text())
        assert summary["trials"] == 2
        assert 0.0 <= summary["success_rate"] <= 1.0
        assert len(summary["per_trial"]) == 2

    def test_invalid_trials(self, runner, dataset_file, tmp_path):
        result = runner.invoke(
            main,
            ["batch", "--dataset", dataset_file,
             "--out", str(tmp_path / "x.json"), "--trials", "0"],
        )
        assert result.exit_code != 0

"""Command-line entry point.

Commands: ``datagen`` (build the training dataset), ``fit-inspect`` (fit a
tree on the full dataset and dump it), ``explain`` (local prediction,
explanation, counterfactuals for one attribute vector), ``run`` (one
closed-loop scenario), and ``batch`` (seeded multi-trial evaluation).  A
single TOML config file fully determines a run.
"""

from __future__ import annotations

import csv
import json
import math
import statistics
import sys
from pathlib import Path

import click
import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from cobot_monitor.core import (
    AttributeVector,
    Dataset,
    Label,
    load_dataset,
    save_dataset,
)
from cobot_monitor.dtree import (
    TreeParams,
    counterfactuals,
    explain,
    fit,
    format_counterfactuals,
    format_explanation,
    predictor_importance,
    tree_attributes_used,
    tree_to_json,
)
from cobot_monitor.localsel import LocalitySpec, select_local_adaptive
from cobot_monitor.planner import MonitorConfig
from cobot_monitor.sim import (
    HumanSpec,
    RunResult,
    Scenario,
    generate_training_data,
    random_human_specs,
    run_scenario,
    training_scenarios,
)
from cobot_monitor.validation import apply_updates, case1_violation

DEFAULT_CONFIG = {
    "monitor": {
        "sensing_range": 5.0,
        "delta_th": 1.5,
        "nominal_v": 0.6,
        "lanes": [-2.0, -1.0, 0.0, 1.0, 2.0],
        "velocities": [0.0, 0.2, 0.4, 0.6, 0.8, 1.0],
        "tracking_eps": 0.1,
        "lookahead": 0.6,
        "tick": 0.1,
        "delta": 0.75,
        "correction_delta": 0.5,
        "min_local_size": 30,
        "correction_min_leaf": 30,
        "dwell_ticks": 20,
        "max_lane_step": 1.0,
    },
    "tree": {
        "min_leaf_size": 5,
        "max_depth": 8,
        "min_impurity_decrease": 1e-4,
    },
    "scenario": {
        "robot_start": [0.0, 0.0],
        "robot_goal": [6.0, 0.0],
        "nominal_action": [0.6, 0.0],
        "duration": 40.0,
        "seed": 0,
        "humans": [
            {"start": [3.2, -4.0], "goal": [3.2, 4.0], "speed": 1.0},
        ],
    },
    "datagen": {
        "labeling_horizon": 3.0,
        "episodes_per_action": 32,
        "duration": 20.0,
        "seed": 42,
        # Labeling threshold = label_margin x delta_th.  Keep the margin at
        # 1: inflating it labels even the best achievable clearances as
        # interfering, which leaves the correction tree with no admissible
        # escape and drives the planner into its failsafe.
        "label_margin": 1.0,
    },
    "batch": {
        "n_humans": 10,
        "speed_range": [0.8, 1.2],
        "x_range": [2.9, 4.3],
        "approach_range": [3.5, 16.0],
        "depart_distance": 6.5,
        "angle_spread": 0.3,
        "duration": 90.0,
    },
}


def load_config(path) -> dict:
    """Read a TOML config, filling unset values from the defaults."""
    merged = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path is not None:
        with open(path, "rb") as fh:
            user = tomllib.load(fh)
        for section, values in user.items():
            merged.setdefault(section, {}).update(values)
    return merged


def monitor_config(cfg: dict, goal=None, delta_th=None, tick=None) -> MonitorConfig:
    m = cfg["monitor"]
    return MonitorConfig(
        sensing_range=m["sensing_range"],
        delta_th=delta_th if delta_th is not None else m["delta_th"],
        nominal_v=m["nominal_v"],
        lanes=tuple(m["lanes"]),
        velocities=tuple(m["velocities"]),
        tracking_eps=m["tracking_eps"],
        lookahead=m["lookahead"],
        tick=tick if tick is not None else m["tick"],
        goal=tuple(goal) if goal is not None else tuple(cfg["scenario"]["robot_goal"]),
        delta=m["delta"],
        correction_delta=m["correction_delta"],
        min_local_size=m["min_local_size"],
        correction_min_leaf=m["correction_min_leaf"],
        dwell_ticks=m["dwell_ticks"],
        max_lane_step=m["max_lane_step"],
        tree_params=tree_params(cfg),
    )


def tree_params(cfg: dict) -> TreeParams:
    t = cfg["tree"]
    return TreeParams(
        min_leaf_size=t["min_leaf_size"],
        max_depth=t["max_depth"],
        min_impurity_decrease=t["min_impurity_decrease"],
    )


def scenario_from_config(cfg: dict) -> Scenario:
    s = cfg["scenario"]
    return Scenario(
        robot_start=tuple(s["robot_start"]),
        robot_goal=tuple(s["robot_goal"]),
        nominal_action=tuple(s["nominal_action"]),
        humans=[
            HumanSpec(start=tuple(h["start"]), goal=tuple(h["goal"]), speed=h["speed"])
            for h in s["humans"]
        ],
        duration=s["duration"],
        tick=cfg["monitor"]["tick"],
        delta_th=cfg["monitor"]["delta_th"],
        seed=s["seed"],
    )


def write_run_outputs(result: RunResult, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    traj = result.trajectory
    agents = [("robot", traj.robot)] + [
        (f"human{h}", states) for h, states in enumerate(traj.humans)
    ]
    for name, states in agents:
        with open(out_dir / f"trajectory_{name}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "y", "heading", "speed"])
            for t, s in enumerate(states):
                writer.writerow(
                    [round(t * traj.tick, 6), s.x, s.y, s.heading, s.speed]
                )
    with open(out_dir / "metrics.json", "w") as fh:
        json.dump(result.metrics.to_dict(), fh, indent=2)
    with open(out_dir / "report.jsonl", "w") as fh:
        for report in result.reports:
            fh.write(json.dumps(report.to_dict()) + "\n")


def apply_run_updates(
    dataset: Dataset, result: RunResult, delta_th: float, tick: float,
    labeling_horizon: float,
) -> tuple[Dataset, list]:
    horizon_ticks = int(round(labeling_horizon / tick))
    distances = result.trajectory.distances()
    hits = case1_violation(distances, delta_th)
    return apply_updates(
        dataset,
        result.attribute_log(),
        distances,
        hits,
        result.case2_hits(),
        horizon_ticks,
        delta_th,
    )


@click.group()
def main():
    """Interpretable interference monitor: data generation, tree
    inspection, scenario runs, and batch evaluation."""


@main.command()
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--out", type=click.Path(), required=True)
@click.option("--seed", type=int, default=None, help="Override the datagen seed.")
def datagen(config, out, seed):
    """Generate the labeled training dataset from non-reactive episodes."""
    cfg = load_config(config)
    d = cfg["datagen"]
    m = cfg["monitor"]
    if seed is None:
        seed = d["seed"]
    rng = np.random.default_rng(seed)
    paths = random_human_specs(rng, d["episodes_per_action"])
    scenarios = training_scenarios(
        m["velocities"], m["lanes"], paths,
        duration=d["duration"], tick=m["tick"], delta_th=m["delta_th"],
    )
    if not scenarios:
        raise click.ClickException("config produced no training scenarios")
    dataset = generate_training_data(
        scenarios,
        labeling_horizon=d["labeling_horizon"],
        lanes=m["lanes"],
        label_threshold=d["label_margin"] * m["delta_th"],
    )
    save_dataset(dataset, out)
    n_pos, n_neg = dataset.class_counts()
    click.echo(f"wrote {len(dataset)} samples to {out}")
    click.echo(f"class balance: {n_pos} interfere / {n_neg} not-interfere")


@main.command("fit-inspect")
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--json-out", type=click.Path(), default=None)
def fit_inspect(dataset_path, config, json_out):
    """Fit a tree on the full dataset; print importance and structure."""
    cfg = load_config(config)
    dataset = load_dataset(dataset_path)
    if len(dataset) == 0:
        raise click.ClickException("dataset is empty")
    tree = fit(dataset, tree_params(cfg))
    importance = predictor_importance(tree)
    from cobot_monitor.core import ATTRIBUTE_NAMES

    click.echo("predictor importance (normalized):")
    for name, value in zip(ATTRIBUTE_NAMES, importance):
        click.echo(f"  {name:>6}: {value:.4f}")
    dump = tree_to_json(tree, indent=2)
    if json_out:
        Path(json_out).write_text(dump)
        click.echo(f"tree dump written to {json_out}")
    else:
        click.echo(dump)


@main.command("explain")
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--config", type=click.Path(exists=True), default=None)
@click.argument("alpha", nargs=-1, type=float)
def explain_cmd(dataset_path, config, alpha):
    """Local prediction, explanation, and counterfactuals at ALPHA
    (8 numbers in dataset column order)."""
    if len(alpha) != 8:
        raise click.UsageError("ALPHA must be exactly 8 numbers")
    cfg = load_config(config)
    dataset = load_dataset(dataset_path)
    if len(dataset) == 0:
        raise click.ClickException("dataset is empty")
    vector = AttributeVector.from_array(alpha)
    spec = LocalitySpec.from_dataset(dataset, delta=cfg["monitor"]["delta"])
    local, _, out_of_data = select_local_adaptive(
        dataset, vector, spec, min_size=cfg["monitor"]["min_local_size"]
    )
    if out_of_data:
        click.echo("out-of-data: no training samples near this observation")
        sys.exit(1)
    tree = fit(local, tree_params(cfg))
    explanation = explain(tree, vector)
    rules = counterfactuals(tree, explanation.predicted)
    click.echo(format_explanation(explanation))
    click.echo(format_counterfactuals(rules))
    click.echo(tree_to_json(tree, indent=2))


@main.command("run")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--policy", type=click.Choice(["dt-monitor", "nominal-nonreactive"]),
              default="dt-monitor")
@click.option("--seed", type=int, default=None)
@click.option("--with-updates", is_flag=True,
              help="Apply run-time validation updates and write the updated dataset.")
@click.option("--dataset-out", type=click.Path(), default=None,
              help="Path for the updated dataset (default: overwrite input).")
def run_cmd(config, dataset_path, out, policy, seed, with_updates, dataset_out):
    """Run one closed-loop scenario; exit code 0 iff the goal is reached."""
    cfg = load_config(config)
    dataset = load_dataset(dataset_path)
    scenario = scenario_from_config(cfg)
    mon_cfg = monitor_config(cfg, goal=scenario.robot_goal,
                             delta_th=scenario.delta_th)
    result = run_scenario(scenario, policy, dataset, cfg=mon_cfg, seed=seed)
    out_dir = Path(out)
    write_run_outputs(result, out_dir)
    if with_updates and policy == "dt-monitor":
        updated, records = apply_run_updates(
            dataset, result, scenario.delta_th, scenario.tick,
            cfg["datagen"]["labeling_horizon"],
        )
        target = dataset_out or dataset_path
        save_dataset(updated, target)
        with open(out_dir / "updates.jsonl", "w") as fh:
            for record in records:
                fh.write(json.dumps(record.to_dict()) + "\n")
        click.echo(f"dataset updated: +{len(records)} samples -> {target}")
    click.echo(json.dumps(result.metrics.to_dict(), indent=2))
    sys.exit(0 if result.metrics.goal_reached else 1)


@main.command("batch")
@click.option("--config", type=click.Path(exists=True), default=None)
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--out", type=click.Path(), required=True)
@click.option("--trials", type=int, default=50)
@click.option("--seed", type=int, default=0)
@click.option("--with-updates", is_flag=True)
def batch_cmd(config, dataset_path, out, trials, seed, with_updates):
    """Seeded multi-trial evaluation with random human trajectories."""
    if trials < 1:
        raise click.UsageError("--trials must be >= 1")
    cfg = load_config(config)
    dataset = load_dataset(dataset_path)
    summary = run_batch(cfg, dataset, trials, seed, with_updates)
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(summary, fh, indent=2)
    click.echo(json.dumps(
        {k: summary[k] for k in ("trials", "success_rate", "mean_min_distance",
                                 "mean_dt_op_ms", "max_dt_op_ms")},
        indent=2,
    ))


def run_batch(cfg: dict, dataset: Dataset, trials: int, seed: int,
              with_updates: bool) -> dict:
    """Aggregate metrics over seeded random trials.

    Per trial: success (no interference per the deviation bound), minimum
    human-robot distance, decision-op timing, and the peak number of
    in-range humans as a crowd-density indicator.
    """
    b = cfg["batch"]
    s = cfg["scenario"]
    mon_cfg = monitor_config(cfg)
    per_trial = []
    for trial in range(trials):
        rng = np.random.default_rng((seed, trial))
        humans = random_human_specs(
            rng, b["n_humans"],
            x_range=tuple(b["x_range"]),
            approach_range=tuple(b["approach_range"]),
            depart_distance=b["depart_distance"],
            angle_spread=b["angle_spread"],
            speed_range=tuple(b["speed_range"]),
        )
        scenario = Scenario(
            robot_start=tuple(s["robot_start"]),
            robot_goal=tuple(s["robot_goal"]),
            nominal_action=tuple(s["nominal_action"]),
            humans=humans,
            duration=b["duration"],
            tick=cfg["monitor"]["tick"],
            delta_th=cfg["monitor"]["delta_th"],
            seed=seed + trial,
        )
        result = run_scenario(scenario, "dt-monitor", dataset, cfg=mon_cfg)
        peak_in_range = max(
            (len(r.humans) for r in result.reports), default=0
        )
        distances = result.trajectory.distances()
        if distances.size:
            closest_tick = int(np.unravel_index(np.nanargmin(distances),
                                                distances.shape)[0])
            in_range_at_closest = int(
                np.sum(distances[closest_tick] <= mon_cfg.sensing_range)
            )
        else:
            in_range_at_closest = 0
        op_times = [r.dt_op_ms for r in result.reports]
        per_trial.append(
            {
                "trial": trial,
                "success": (not result.metrics.interfered)
                and result.metrics.goal_reached,
                "min_distance": result.metrics.min_distance,
                "goal_reached": result.metrics.goal_reached,
                "mean_dt_op_ms": result.metrics.mean_dt_op_ms,
                "max_dt_op_ms": max(op_times, default=0.0),
                "peak_in_range": peak_in_range,
                "in_range_at_closest": in_range_at_closest,
                "dataset_size": len(dataset),
            }
        )
        if with_updates:
            dataset, _ = apply_run_updates(
                dataset, result, scenario.delta_th, scenario.tick,
                cfg["datagen"]["labeling_horizon"],
            )
    successes = [t for t in per_trial if t["success"]]
    failures = [t for t in per_trial if not t["success"]]
    finite_min = [t["min_distance"] for t in per_trial if math.isfinite(t["min_distance"])]
    summary = {
        "trials": trials,
        "success_rate": len(successes) / trials,
        "mean_min_distance": statistics.mean(finite_min) if finite_min else None,
        "mean_dt_op_ms": statistics.mean(t["mean_dt_op_ms"] for t in per_trial),
        "max_dt_op_ms": max(t["max_dt_op_ms"] for t in per_trial),
        "median_peak_in_range_success": (
            statistics.median(t["peak_in_range"] for t in successes)
            if successes else None
        ),
        "median_peak_in_range_failure": (
            statistics.median(t["peak_in_range"] for t in failures)
            if failures else None
        ),
        "median_in_range_at_closest_success": (
            statistics.median(t["in_range_at_closest"] for t in successes)
            if successes else None
        ),
        "median_in_range_at_closest_failure": (
            statistics.median(t["in_range_at_closest"] for t in failures)
            if failures else None
        ),
        "per_trial": per_trial,
    }
    return summary


if __name__ == "__main__":
    main()

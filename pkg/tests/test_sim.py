"""World model: human motion, training-data generation, scenario runs."""

import math

import numpy as np
import pytest

from cobot_monitor.core import AgentState, Label, load_dataset, save_dataset
from cobot_monitor.sim import (
    DEVIATION_TOLERANCE,
    GOAL_TOLERANCE,
    K_REPULSE,
    SPEED_CAP_FACTOR,
    HumanSpec,
    Scenario,
    _label_episode,
    generate_training_data,
    human_step,
    intended_position,
    random_human_specs,
    run_scenario,
    training_scenarios,
)

LANES = (-2.0, -1.0, 0.0, 1.0, 2.0)
VELOCITIES = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)


def far_robot():
    return AgentState(100.0, 100.0, 0.0, 0.0)


class TestHumanStep:
    def test_walks_toward_goal_unimpeded(self):
        h = AgentState(0.0, 0.0, 0.0, 1.0)
        nxt = human_step(h, (10.0, 0.0), far_robot(), 1.5, 0.1, 1.0)
        assert nxt.x == pytest.approx(0.1)
        assert nxt.y == pytest.approx(0.0)
        assert nxt.speed == pytest.approx(1.0)

    def test_stops_at_goal(self):
        h = AgentState(10.0, 0.0, 0.0, 1.0)
        nxt = human_step(h, (10.0, 0.0), far_robot(), 1.5, 0.1, 1.0)
        assert (nxt.x, nxt.y) == (10.0, 0.0)
        assert nxt.speed == 0.0

    def test_no_overshoot(self):
        h = AgentState(9.95, 0.0, 0.0, 1.0)
        nxt = human_step(h, (10.0, 0.0), far_robot(), 1.5, 0.1, 1.0)
        assert nxt.x <= 10.0 + 1e-9

    def test_repulsed_inside_threshold(self):
        h = AgentState(0.0, 0.0, 0.0, 1.0)
        robot = AgentState(0.0, -1.0, 0.0, 0.0)
        nxt = human_step(h, (10.0, 0.0), robot, 1.5, 0.1, 1.0)
        assert nxt.y > 0.0  # pushed away from the robot

    def test_no_repulsion_outside_threshold(self):
        h = AgentState(0.0, 0.0, 0.0, 1.0)
        robot = AgentState(0.0, -1.51, 0.0, 0.0)
        nxt = human_step(h, (10.0, 0.0), robot, 1.5, 0.1, 1.0)
        assert nxt.y == pytest.approx(0.0)

    def test_repulsion_continuous_at_threshold(self):
        h = AgentState(0.0, 0.0, 0.0, 1.0)
        robot = AgentState(0.0, -1.499, 0.0, 0.0)
        nxt = human_step(h, (10.0, 0.0), robot, 1.5, 0.1, 1.0)
        assert 0.0 < nxt.y < 1e-3

    def test_speed_capped(self):
        h = AgentState(0.0, 0.0, 0.0, 1.0)
        robot = AgentState(0.0, -0.05, 0.0, 0.0)
        nxt = human_step(h, (10.0, 0.0), robot, 1.5, 0.1, 1.0)
        assert nxt.speed <= SPEED_CAP_FACTOR * 1.0 + 1e-9

    def test_bad_dt(self):
        with pytest.raises(ValueError):
            human_step(AgentState(0, 0, 0, 1), (1, 0), far_robot(), 1.5, 0.0, 1.0)


class TestIntendedPosition:
    def test_straight_line_constant_speed(self):
        spec = HumanSpec(start=(0.0, 0.0), goal=(10.0, 0.0), speed=1.0)
        assert intended_position(spec, 0, 0.1) == (0.0, 0.0)
        x, y = intended_position(spec, 50, 0.1)
        assert x == pytest.approx(5.0) and y == pytest.approx(0.0)

    def test_clamped_at_goal(self):
        spec = HumanSpec(start=(0.0, 0.0), goal=(1.0, 0.0), speed=1.0)
        assert intended_position(spec, 1000, 0.1) == (
            pytest.approx(1.0), pytest.approx(0.0)
        )

    def test_degenerate_path(self):
        spec = HumanSpec(start=(2.0, 3.0), goal=(2.0, 3.0), speed=1.0)
        assert intended_position(spec, 7, 0.1) == (2.0, 3.0)


class TestLabeling:
    def test_window_lookahead(self):
        distances = np.array([[3.0], [2.0], [1.4], [2.0], [3.0]])
        labels = _label_episode(distances, delta_th=1.5, horizon_ticks=2)
        assert labels[:, 0].tolist() == [True, True, True, False, False]

    def test_no_dip_no_label(self):
        distances = np.full((5, 1), 3.0)
        labels = _label_episode(distances, 1.5, 2)
        assert not labels.any()


class TestTrainingData:
    def test_scenarios_cover_action_grid(self):
        paths = [HumanSpec(start=(3.0, -4.0), goal=(3.0, 4.0), speed=1.0)]
        scenarios = training_scenarios(VELOCITIES, LANES, paths, duration=5.0)
        assert len(scenarios) == len(VELOCITIES) * len(LANES)
        actions = {s.nominal_action for s in scenarios}
        assert actions == {(v, l) for v in VELOCITIES for l in LANES}

    def test_generated_labels_match_rule(self):
        paths = [HumanSpec(start=(3.0, -4.0), goal=(3.0, 4.0), speed=1.0)]
        scenarios = training_scenarios((0.6,), (0.0,), paths, duration=10.0)
        data = generate_training_data(scenarios, labeling_horizon=3.0, lanes=LANES)
        n_pos, n_neg = data.class_counts()
        assert n_pos > 0 and n_neg > 0  # crossing at 0.6 has both phases
        # Robot-side attributes are the held nominal action throughout.
        m = data.matrix
        assert np.allclose(m[:, 6], 0.6)
        assert np.allclose(m[:, 7], 0.0)

    def test_stationary_robot_far_crossing_all_negative(self):
        paths = [HumanSpec(start=(4.0, -4.0), goal=(4.0, 4.0), speed=1.0)]
        scenarios = training_scenarios((0.0,), (0.0,), paths, duration=10.0)
        data = generate_training_data(scenarios, lanes=LANES)
        assert data.class_counts()[0] == 0  # never within 1.5 m of (0, 0)

    def test_empty_scenarios_rejected(self):
        with pytest.raises(ValueError):
            generate_training_data([])

    def test_round_trips_through_csv(self, tmp_path):
        paths = [HumanSpec(start=(3.0, -4.0), goal=(3.0, 4.0), speed=1.0)]
        scenarios = training_scenarios((0.6,), (0.0,), paths, duration=3.0)
        data = generate_training_data(scenarios, lanes=LANES)
        path = tmp_path / "train.csv"
        save_dataset(data, path)
        assert load_dataset(path) == data


class TestRandomHumanSpecs:
    def test_count_and_speed_range(self):
        rng = np.random.default_rng(0)
        specs = random_human_specs(rng, 25)
        assert len(specs) == 25
        assert all(0.8 <= s.speed <= 1.2 for s in specs)

    def test_paths_cross_corridor_inside_window(self):
        rng = np.random.default_rng(1)
        for spec in random_human_specs(rng, 50):
            sx, sy = spec.start
            gx, gy = spec.goal
            assert sy * gy < 0  # start and goal on opposite sides
            # Straight path crosses y = 0 inside the configured x window.
            f = -sy / (gy - sy)
            cx = sx + f * (gx - sx)
            assert 2.9 - 1e-6 <= cx <= 4.3 + 1e-6

    def test_path_lines_clear_corridor_endpoints(self):
        rng = np.random.default_rng(2)
        for spec in random_human_specs(rng, 200):
            s = np.array(spec.start)
            g = np.array(spec.goal)
            u = (g - s) / np.linalg.norm(g - s)
            for endpoint, clearance in (((0.0, 0.0), 2.5), ((6.0, 0.0), 1.5)):
                w = np.array(endpoint) - s
                dist = abs(w[0] * u[1] - w[1] * u[0])
                assert dist >= clearance

    def test_deterministic_under_seed(self):
        a = random_human_specs(np.random.default_rng(7), 5)
        b = random_human_specs(np.random.default_rng(7), 5)
        assert a == b


class TestRunScenario:
    def crossing_scenario(self, **kw):
        defaults = dict(
            robot_start=(0.0, 0.0),
            robot_goal=(6.0, 0.0),
            nominal_action=(0.6, 0.0),
            humans=[HumanSpec(start=(3.2, -4.0), goal=(3.2, 4.0), speed=1.0)],
            duration=30.0,
        )
        defaults.update(kw)
        return Scenario(**defaults)

    def test_unknown_policy(self):
        with pytest.raises(ValueError):
            run_scenario(self.crossing_scenario(), "teleport")

    def test_monitor_requires_dataset(self):
        with pytest.raises(ValueError):
            run_scenario(self.crossing_scenario(), "dt-monitor")

    def test_nonreactive_drives_straight(self):
        result = run_scenario(self.crossing_scenario(), "nominal-nonreactive")
        robot = result.trajectory.robot
        assert all(s.y == 0.0 for s in robot)
        assert result.metrics.goal_reached
        assert result.metrics.min_distance < 1.5
        assert result.metrics.interfered

    def test_metrics_shapes(self):
        result = run_scenario(self.crossing_scenario(), "nominal-nonreactive")
        assert len(result.metrics.max_deviation) == 1
        dist = result.trajectory.distances()
        assert dist.shape[1] == 1
        assert result.metrics.min_distance == pytest.approx(float(np.nanmin(dist)))

    def test_deviation_definition(self):
        result = run_scenario(self.crossing_scenario(), "nominal-nonreactive")
        traj = result.trajectory
        devs = [
            math.hypot(s.x - q[0], s.y - q[1])
            for s, q in zip(traj.humans[0], traj.intended[0])
        ]
        assert result.metrics.max_deviation[0] == pytest.approx(max(devs))
        assert result.metrics.interfered == (max(devs) > DEVIATION_TOLERANCE)

    def test_robot_far_from_everyone_no_interference(self):
        scenario = self.crossing_scenario(
            humans=[HumanSpec(start=(30.0, -4.0), goal=(30.0, 4.0), speed=1.0)],
        )
        result = run_scenario(scenario, "nominal-nonreactive")
        assert not result.metrics.interfered
        assert result.metrics.max_deviation[0] == pytest.approx(0.0, abs=1e-9)

"""2D world: reactive human model, robot kinematics, training-data
generation, and closed-loop scenario evaluation.

Humans head straight for their goals and are pushed off course only when
the robot comes inside the distance threshold, which is exactly the event
the monitor is trained to predict and avoid.  All integration is explicit
Euler at the control tick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from cobot_monitor.core import (
    AgentState,
    AttributeVector,
    Dataset,
    Label,
    LabeledSample,
    compute_attributes,
    wrap_angle,
)
from cobot_monitor.planner import (
    MonitorConfig,
    MonitorState,
    TickReport,
    monitor_tick,
)

K_REPULSE = 1.0        # m^2/s, human repulsion gain
SPEED_CAP_FACTOR = 1.3  # cap on human speed as a multiple of nominal
GOAL_TOLERANCE = 0.3   # m, robot counts as arrived inside this radius
DEVIATION_TOLERANCE = 0.25  # m, Problem-1 deviation bound for the interfered flag


@dataclass(frozen=True)
class HumanSpec:
    start: tuple[float, float]
    goal: tuple[float, float]
    speed: float


@dataclass
class Scenario:
    robot_start: tuple[float, float]
    robot_goal: tuple[float, float]
    nominal_action: tuple[float, float]   # (velocity m/s, lane m)
    humans: list[HumanSpec]
    duration: float = 30.0
    tick: float = 0.1
    delta_th: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.tick <= 0:
            raise ValueError("tick must be positive")
        if any(h.speed <= 0 for h in self.humans):
            raise ValueError("human speeds must be positive")


@dataclass
class Trajectory:
    """Per-tick states for every agent plus intended straight-line human
    paths, all sampled on the same uniform tick grid."""

    tick: float
    robot: list[AgentState]
    humans: list[list[AgentState]]        # [human][tick]
    intended: list[list[tuple[float, float]]]  # [human][tick]

    @property
    def n_ticks(self) -> int:
        return len(self.robot)

    def distances(self) -> np.ndarray:
        """(ticks, humans) robot-human distances."""
        out = np.full((self.n_ticks, len(self.humans)), np.nan)
        for h, states in enumerate(self.humans):
            for t, (r, s) in enumerate(zip(self.robot, states)):
                out[t, h] = r.distance_to(s)
        return out


@dataclass
class RunMetrics:
    min_distance: float
    max_deviation: list[float]
    interfered: bool
    goal_reached: bool
    mean_dt_op_ms: float

    def to_dict(self) -> dict:
        return {
            "min_distance": self.min_distance,
            "max_deviation": self.max_deviation,
            "interfered": self.interfered,
            "goal_reached": self.goal_reached,
            "mean_dt_op_ms": self.mean_dt_op_ms,
        }


def intended_position(
    spec: HumanSpec, tick_index: int, dt: float
) -> tuple[float, float]:
    """Point the human would occupy absent the robot: constant speed along
    the straight start-goal line, stopping at the goal."""
    sx, sy = spec.start
    gx, gy = spec.goal
    length = math.hypot(gx - sx, gy - sy)
    if length < 1e-12:
        return spec.start
    travelled = min(spec.speed * tick_index * dt, length)
    f = travelled / length
    return (sx + f * (gx - sx), sy + f * (gy - sy))


def human_step(
    human: AgentState,
    goal: tuple[float, float],
    robot: AgentState,
    delta_th: float,
    dt: float,
    nominal_speed: float,
) -> AgentState:
    """Advance one human: goal attraction plus robot repulsion inside the
    distance threshold; the repulsion magnitude is continuous (zero at the
    threshold) and the resulting speed is capped."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    pos = human.position()
    to_goal = np.array(goal) - pos
    dist_goal = np.linalg.norm(to_goal)
    if dist_goal < 1e-9:
        return AgentState(human.x, human.y, human.heading, 0.0)
    # Attraction never overshoots the goal within one tick.
    v_attract = to_goal / dist_goal * min(nominal_speed, dist_goal / dt)

    away = pos - robot.position()
    d = np.linalg.norm(away)
    v_repulse = np.zeros(2)
    if 1e-9 < d < delta_th:
        v_repulse = K_REPULSE * (1.0 / d - 1.0 / delta_th) * away / d

    v = v_attract + v_repulse
    speed = np.linalg.norm(v)
    cap = SPEED_CAP_FACTOR * nominal_speed
    if speed > cap:
        v = v / speed * cap
        speed = cap
    new_pos = pos + v * dt
    heading = math.atan2(v[1], v[0]) if speed > 1e-9 else human.heading
    return AgentState(float(new_pos[0]), float(new_pos[1]), heading, float(speed))


def _human_initial(spec: HumanSpec) -> AgentState:
    heading = math.atan2(spec.goal[1] - spec.start[1], spec.goal[0] - spec.start[0])
    return AgentState(spec.start[0], spec.start[1], heading, spec.speed)


def _label_episode(
    distances: np.ndarray, delta_th: float, horizon_ticks: int
) -> np.ndarray:
    """Boolean per (tick, human): does the distance dip below the threshold
    within the labeling horizon?"""
    n_ticks, n_humans = distances.shape
    labels = np.zeros((n_ticks, n_humans), dtype=bool)
    for h in range(n_humans):
        col = distances[:, h]
        for t in range(n_ticks):
            window = col[t : t + horizon_ticks + 1]
            labels[t, h] = bool(np.nanmin(window) <= delta_th)
    return labels


def generate_training_data(
    scenarios: Sequence[Scenario],
    labeling_horizon: float = 3.0,
    lanes: Sequence[float] = (-2.0, -1.0, 0.0, 1.0, 2.0),
    label_threshold: Optional[float] = None,
) -> Dataset:
    """Roll out non-reactive robot episodes and label the recorded
    attributes: INTERFERE iff the pair distance drops below the labeling
    threshold within the labeling horizon.

    ``label_threshold`` defaults to the scenario's distance threshold.
    Setting it above the threshold adds a safety margin: actions that pass
    merely-barely outside the threshold get labeled interfering, so the
    monitor prefers corrections with slack for the transient while the
    robot converges to a ghost target.

    The robot holds its scenario (velocity, lane) without reacting, so the
    dataset captures what happens when no correction is applied.
    """
    if not scenarios:
        raise ValueError("need at least one scenario")
    dataset = Dataset()
    for scenario in scenarios:
        v, lane = scenario.nominal_action
        n_ticks = int(round(scenario.duration / scenario.tick))
        robot = AgentState(scenario.robot_start[0], lane, 0.0, v)
        humans = [_human_initial(spec) for spec in scenario.humans]
        n_h = len(humans)

        attributes = [[None] * n_h for _ in range(n_ticks)]
        distances = np.full((n_ticks, n_h), np.nan)
        prev_d: list[Optional[float]] = [None] * n_h
        for t in range(n_ticks):
            for h in range(n_h):
                alpha = compute_attributes(
                    robot, humans[h], prev_d[h], scenario.tick, lanes
                )
                attributes[t][h] = alpha
                distances[t, h] = alpha.d
                prev_d[h] = alpha.d
            for h in range(n_h):
                humans[h] = human_step(
                    humans[h], scenario.humans[h].goal, robot,
                    scenario.delta_th, scenario.tick, scenario.humans[h].speed,
                )
            robot = AgentState(robot.x + v * scenario.tick, lane, 0.0, v)

        horizon_ticks = int(round(labeling_horizon / scenario.tick))
        threshold = (
            scenario.delta_th if label_threshold is None else label_threshold
        )
        labels = _label_episode(distances, threshold, horizon_ticks)
        for t in range(n_ticks):
            for h in range(n_h):
                dataset.append(
                    LabeledSample(
                        attributes[t][h],
                        Label.INTERFERE if labels[t, h] else Label.NOT_INTERFERE,
                    )
                )
    return dataset


@dataclass
class RunResult:
    trajectory: Trajectory
    metrics: RunMetrics
    reports: list[TickReport]

    def attribute_log(self) -> dict[tuple[int, int], AttributeVector]:
        """(tick, human) -> attribute vector used for that prediction."""
        log = {}
        for t, report in enumerate(self.reports):
            for hr in report.humans:
                log[(t, hr.index)] = hr.attributes
        return log

    def case2_hits(self) -> list[tuple[int, int]]:
        hits = []
        for t, report in enumerate(self.reports):
            for hr in report.humans:
                if hr.out_of_bounds:
                    hits.append((t, hr.index))
        return hits


def run_scenario(
    scenario: Scenario,
    policy: str,
    global_data: Optional[Dataset] = None,
    cfg: Optional[MonitorConfig] = None,
    seed: Optional[int] = None,
) -> RunResult:
    """Tick the world under one of two robot policies.

    ``nominal-nonreactive`` drives the scenario action without reacting;
    ``dt-monitor`` runs the interpretable monitor closed-loop and requires a
    non-empty global dataset.
    """
    if policy not in ("nominal-nonreactive", "dt-monitor"):
        raise ValueError(f"unknown policy {policy!r}")
    if policy == "dt-monitor":
        if global_data is None or len(global_data) == 0:
            raise ValueError("dt-monitor policy requires a non-empty dataset")
        if cfg is None:
            cfg = MonitorConfig(
                delta_th=scenario.delta_th,
                goal=scenario.robot_goal,
                tick=scenario.tick,
            )
    if seed is None:
        seed = scenario.seed

    v_nom, lane_nom = scenario.nominal_action
    if policy == "nominal-nonreactive":
        robot = AgentState(scenario.robot_start[0], lane_nom, 0.0, v_nom)
    else:
        robot = AgentState(scenario.robot_start[0], scenario.robot_start[1], 0.0, v_nom)
    humans = [_human_initial(spec) for spec in scenario.humans]
    n_h = len(humans)
    n_ticks = int(round(scenario.duration / scenario.tick))

    traj = Trajectory(
        tick=scenario.tick,
        robot=[],
        humans=[[] for _ in range(n_h)],
        intended=[[] for _ in range(n_h)],
    )
    reports: list[TickReport] = []
    state = MonitorState()
    goal_reached = False

    for t in range(n_ticks):
        traj.robot.append(robot)
        for h in range(n_h):
            traj.humans[h].append(humans[h])
            traj.intended[h].append(
                intended_position(scenario.humans[h], t, scenario.tick)
            )

        next_humans = [
            human_step(
                humans[h], scenario.humans[h].goal, robot,
                scenario.delta_th, scenario.tick, scenario.humans[h].speed,
            )
            for h in range(n_h)
        ]

        goal_dist = math.hypot(
            scenario.robot_goal[0] - robot.x, scenario.robot_goal[1] - robot.y
        )
        if goal_dist <= GOAL_TOLERANCE:
            goal_reached = True

        if policy == "nominal-nonreactive":
            robot = AgentState(robot.x + v_nom * scenario.tick, lane_nom, 0.0, v_nom)
        elif goal_reached:
            robot = AgentState(robot.x, robot.y, robot.heading, 0.0)
        else:
            (speed, heading_rate), state, report = monitor_tick(
                robot, humans, state, global_data, cfg, seed=seed
            )
            reports.append(report)
            new_heading = wrap_angle(robot.heading + heading_rate * scenario.tick)
            robot = AgentState(
                robot.x + speed * math.cos(robot.heading) * scenario.tick,
                robot.y + speed * math.sin(robot.heading) * scenario.tick,
                new_heading,
                speed,
            )
        humans = next_humans

        if goal_reached and all(
            math.hypot(humans[h].x - scenario.humans[h].goal[0],
                       humans[h].y - scenario.humans[h].goal[1]) < GOAL_TOLERANCE
            for h in range(n_h)
        ):
            break

    distances = traj.distances()
    min_distance = float(np.nanmin(distances)) if distances.size else math.inf
    max_dev = []
    for h in range(n_h):
        devs = [
            math.hypot(s.x - q[0], s.y - q[1])
            for s, q in zip(traj.humans[h], traj.intended[h])
        ]
        max_dev.append(max(devs) if devs else 0.0)
    interfered = any(dev > DEVIATION_TOLERANCE for dev in max_dev)
    mean_ms = (
        float(np.mean([r.dt_op_ms for r in reports])) if reports else 0.0
    )
    metrics = RunMetrics(
        min_distance=min_distance,
        max_deviation=max_dev,
        interfered=interfered,
        goal_reached=goal_reached,
        mean_dt_op_ms=mean_ms,
    )
    return RunResult(trajectory=traj, metrics=metrics, reports=reports)


# ---------------------------------------------------------------------------
# Scenario generation
# ---------------------------------------------------------------------------

def random_human_specs(
    rng: np.random.Generator,
    n: int,
    x_range: tuple[float, float] = (2.9, 4.3),
    approach_range: tuple[float, float] = (3.5, 16.0),
    depart_distance: float = 6.5,
    angle_spread: float = 0.3,
    speed_range: tuple[float, float] = (0.8, 1.2),
) -> list[HumanSpec]:
    """Humans starting on a ring around the corridor and crossing it
    transversely, goals on the opposite side.

    Each human's straight path crosses the corridor centerline (y = 0) at a
    random x inside ``x_range``, at a random angle within ``angle_spread``
    radians of perpendicular, from either side.  Start distances vary
    inside ``approach_range`` so arrivals stagger instead of the whole
    crowd converging at once, and ``depart_distance`` puts every goal
    beyond the robot's sensing range, so humans that finish crossing drop
    out of the instantaneous in-range count instead of standing inside it.
    The geometry keeps every intended path away from the corridor
    endpoints: with the defaults, no path line passes within ~1.6 m of the
    robot's goal or ~2.7 m of its start, so a robot that halts early
    always has a clear place to wait out the crowd.
    """
    specs = []
    for _ in range(n):
        cx = rng.uniform(*x_range)
        side = 1.0 if rng.uniform() < 0.5 else -1.0
        phi = side * (math.pi / 2.0) + rng.uniform(-angle_spread, angle_spread)
        u = (math.cos(phi), math.sin(phi))
        r_pre = rng.uniform(*approach_range)
        start = (cx - r_pre * u[0], -r_pre * u[1])
        goal = (cx + depart_distance * u[0], depart_distance * u[1])
        specs.append(
            HumanSpec(start=start, goal=goal, speed=float(rng.uniform(*speed_range)))
        )
    return specs


def training_scenarios(
    velocities: Sequence[float],
    lanes: Sequence[float],
    human_paths: Sequence[HumanSpec],
    duration: float = 20.0,
    tick: float = 0.1,
    delta_th: float = 1.5,
) -> list[Scenario]:
    """Full (velocity, lane) grid of non-reactive robot episodes, one human
    path per episode."""
    scenarios = []
    for v in velocities:
        for lane in lanes:
            for spec in human_paths:
                scenarios.append(
                    Scenario(
                        robot_start=(0.0, lane),
                        robot_goal=(duration * v, lane),
                        nominal_action=(v, lane),
                        humans=[spec],
                        duration=duration,
                        tick=tick,
                        delta_th=delta_th,
                    )
                )
    return scenarios

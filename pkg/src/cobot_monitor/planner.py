"""Closed-loop interference monitor.

Every tick the robot predicts, per in-range human, whether its current
behavior will interfere, using a decision tree fit on local training data.
On a positive prediction it fits a correction tree restricted to the
controllable attributes (velocity, lane), extracts counterfactual rules,
instantiates the best feasible one as a ghost target, and pure-pursuits the
ghost.  While the tracking error to the ghost is large, predictions use the
ghost's state instead of the robot's, masking transition states absent from
the training data.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from cobot_monitor.core import (
    AgentState,
    AttributeVector,
    Dataset,
    Label,
    compute_attributes,
    nearest_lane,
    wrap_angle,
)
from cobot_monitor.dtree import (
    CounterfactualRule,
    Explanation,
    TreeParams,
    counterfactuals,
    explain,
    fit,
    predict,
)
from cobot_monitor.localsel import (
    ActionsExhaustedError,
    ControlAction,
    InfeasibleRuleError,
    LocalitySpec,
    combine_ensemble,
    instantiate_action,
    random_unseen_action,
    rank_counterfactuals,
    select_correction_adaptive,
    select_local_adaptive,
)
from cobot_monitor.validation import case2_out_of_bounds, hull_bounds

CORRECTION_ATTRIBUTES = (6, 7)   # v_r, lane
FAILSAFE_SPEED = 0.1             # m/s
CATCHUP_GAIN = 0.5               # 1/s, pure-pursuit speed catch-up
HEADING_GAIN = 2.0               # 1/s, nominal goal-seeking steering
CLEAR_TICKS_TO_REVERT = 5        # consecutive all-clear ticks ending a correction
ESCALATION_TICKS = 40            # unbroken interference ticks before re-deriving


class PlannerMode(enum.Enum):
    NOMINAL = "nominal"
    CORRECTING = "correcting"
    FAILSAFE = "failsafe"


@dataclass
class GhostTarget:
    """Virtual vehicle embodying the chosen corrective action; it drives
    along its lane at the corrective speed while the robot pursues it."""

    state: AgentState
    action: ControlAction
    spawn_time: float

    def advance(self, dt: float, x_max: Optional[float] = None) -> None:
        step = self.action.v_r * dt
        if x_max is None:
            self.state.x += step
        elif self.state.x < x_max:
            # Drive toward the goal line and stop there so pursuit never
            # drags the robot past it.
            self.state.x = min(self.state.x + step, x_max)
        else:
            self.state.x = max(self.state.x - step, x_max)
        self.state.y = self.action.lane


@dataclass
class MonitorConfig:
    sensing_range: float = 5.0
    delta_th: float = 1.5
    nominal_v: float = 0.6
    lanes: tuple[float, ...] = (-2.0, -1.0, 0.0, 1.0, 2.0)
    velocities: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
    tracking_eps: float = 0.1
    lookahead: float = 0.6
    tick: float = 0.1
    goal: tuple[float, float] = (6.0, 0.0)
    delta: float = 0.75
    correction_delta: float = 0.5
    min_local_size: int = 30
    correction_min_leaf: int = 30
    dwell_ticks: int = 20
    max_lane_step: float = 1.0
    tree_params: TreeParams = field(default_factory=TreeParams)

    def __post_init__(self):
        if self.delta_th >= self.sensing_range:
            raise ValueError("delta_th must be below sensing_range")
        for name in ("sensing_range", "delta_th", "nominal_v", "tracking_eps",
                     "lookahead", "tick", "delta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class HumanReport:
    """Per-human diagnostics for one tick."""

    index: int
    attributes: AttributeVector
    prediction: Optional[Label]
    explanation: Optional[Explanation]
    out_of_data: bool
    out_of_bounds: bool
    local_size: int

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "attributes": list(self.attributes.as_array()),
            "prediction": None if self.prediction is None else self.prediction.to_int(),
            "explanation": (
                None if self.explanation is None
                else [str(c) for c in self.explanation.clauses]
            ),
            "out_of_data": self.out_of_data,
            "out_of_bounds": self.out_of_bounds,
            "local_size": self.local_size,
        }


@dataclass
class TickReport:
    """Everything the monitor decided in one tick, for logging and
    validation."""

    t: float
    mode: PlannerMode
    provenance: str                      # "robot" or "ghost"
    humans: list[HumanReport]
    counterfactual_rules: list[CounterfactualRule]
    chosen_rule_index: Optional[int]
    chosen_action: Optional[ControlAction]
    action_source: Optional[str]         # "counterfactual" or "random"
    command: tuple[float, float]
    dt_op_ms: float

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "mode": self.mode.value,
            "provenance": self.provenance,
            "humans": [h.to_dict() for h in self.humans],
            "counterfactuals": [
                {
                    "clauses": [str(c) for c in r.clauses],
                    "error": r.leaf_error,
                    "risk": r.leaf_risk,
                    "support": r.support,
                }
                for r in self.counterfactual_rules
            ],
            "chosen_rule_index": self.chosen_rule_index,
            "chosen_action": (
                None if self.chosen_action is None
                else {"v_r": self.chosen_action.v_r, "lane": self.chosen_action.lane}
            ),
            "action_source": self.action_source,
            "command": {"speed": self.command[0], "heading_rate": self.command[1]},
            "dt_op_ms": self.dt_op_ms,
        }


@dataclass
class MonitorState:
    """Mutable state the monitor carries between ticks."""

    mode: PlannerMode = PlannerMode.NOMINAL
    ghost: Optional[GhostTarget] = None
    prev_distances: dict[int, float] = field(default_factory=dict)
    robot_prev_distances: dict[int, float] = field(default_factory=dict)
    prev_provenance: str = "robot"
    clear_ticks: int = 0
    dwell_remaining: int = 0
    lambda_streak: int = 0
    tick_index: int = 0
    t: float = 0.0


def pure_pursuit(
    robot: AgentState,
    ghost: GhostTarget,
    lookahead: float,
    v_max: float,
    x_max: Optional[float] = None,
) -> tuple[float, float]:
    """Track the ghost: aim a lookahead point ahead of it along its lane,
    steer with the classic curvature law, and catch up in speed
    proportionally to the gap.  ``x_max`` caps the aim point at the goal
    line so the pursuit never overshoots it."""
    if lookahead <= 0:
        raise ValueError("lookahead must be positive")
    aim_x = ghost.state.x + lookahead
    if x_max is not None:
        aim_x = min(aim_x, x_max)
    aim_y = ghost.action.lane
    dx = aim_x - robot.x
    dy = aim_y - robot.y
    if math.hypot(dx, dy) < 1e-9:
        return ghost.state.speed, 0.0
    bearing_error = wrap_angle(math.atan2(dy, dx) - robot.heading)
    curvature = 2.0 * math.sin(bearing_error) / lookahead
    gap = robot.distance_to(ghost.state)
    speed = min(v_max, ghost.state.speed + CATCHUP_GAIN * gap)
    return speed, speed * curvature


def failsafe_command(
    robot: AgentState,
    humans: Sequence[AgentState],
    cfg: MonitorConfig,
) -> tuple[float, float]:
    """Creep at a very low speed, steering down the summed inverse-square
    repulsion gradient of nearby humans."""
    rep = np.zeros(2)
    for h in humans:
        dx = robot.x - h.x
        dy = robot.y - h.y
        d = math.hypot(dx, dy)
        if 1e-9 < d < cfg.delta_th:
            rep += np.array([dx, dy]) / d**3
    if np.linalg.norm(rep) < 1e-9:
        return FAILSAFE_SPEED, 0.0
    desired = math.atan2(rep[1], rep[0])
    heading_rate = HEADING_GAIN * wrap_angle(desired - robot.heading)
    return FAILSAFE_SPEED, heading_rate


def goal_seek_command(
    robot: AgentState, goal: tuple[float, float], speed: float
) -> tuple[float, float]:
    """Head toward a fixed goal point at the given speed."""
    dx = goal[0] - robot.x
    dy = goal[1] - robot.y
    if math.hypot(dx, dy) < 1e-9:
        return 0.0, 0.0
    bearing_error = wrap_angle(math.atan2(dy, dx) - robot.heading)
    return speed, HEADING_GAIN * bearing_error


def monitor_tick(
    robot: AgentState,
    humans: Sequence[AgentState],
    state: MonitorState,
    global_data: Dataset,
    cfg: MonitorConfig,
    seed: int = 0,
) -> tuple[tuple[float, float], MonitorState, TickReport]:
    """One decision cycle: predict per human, correct if needed, command.

    Deterministic given (inputs, seed): all randomness is drawn from a
    generator keyed on (seed, tick index).
    """
    t0 = time.perf_counter()
    rng_key = (seed, state.tick_index)

    # Reference state: ghost while correcting and not yet caught up.
    provenance = "robot"
    reference = robot
    if state.mode is PlannerMode.CORRECTING and state.ghost is not None:
        state.ghost.advance(cfg.tick, x_max=cfg.goal[0])
        # Tracking error counts the speed mismatch too: the ghost spawns at
        # the robot's position, so a position-only gap reads zero before the
        # robot has actually adopted the corrective velocity.
        tracking_error = (
            robot.distance_to(state.ghost.state)
            + abs(robot.speed - state.ghost.action.v_r)
        )
        if tracking_error > cfg.tracking_eps:
            reference = AgentState(
                x=state.ghost.state.x,
                y=state.ghost.state.y,
                heading=state.ghost.state.heading,
                speed=state.ghost.action.v_r,
            )
            provenance = "ghost"

    # Distance derivative history is frame-dependent; reset it when the
    # prediction reference switches between robot and ghost.
    if provenance != state.prev_provenance:
        state.prev_distances.clear()
    state.prev_provenance = provenance

    in_range = [
        (i, h) for i, h in enumerate(humans)
        if robot.distance_to(h) <= cfg.sensing_range
    ]

    base_spec = LocalitySpec.from_dataset(global_data, delta=cfg.delta)
    human_reports: list[HumanReport] = []
    local_specs: dict[int, LocalitySpec] = {}
    new_prev: dict[int, float] = {}
    any_interference = False

    # Robot-frame attributes are tracked in parallel even while predictions
    # reference the ghost: corrections must be derived from where the robot
    # actually is, not from the plan it has failed to reach so far.
    robot_alphas: dict[int, AttributeVector] = {}
    new_robot_prev: dict[int, float] = {}
    for i, h in in_range:
        alpha = compute_attributes(
            reference, h, state.prev_distances.get(i), cfg.tick, cfg.lanes
        )
        new_prev[i] = alpha.d
        if provenance == "ghost":
            r_alpha = compute_attributes(
                robot, h, state.robot_prev_distances.get(i), cfg.tick, cfg.lanes
            )
        else:
            r_alpha = alpha
        robot_alphas[i] = r_alpha
        new_robot_prev[i] = r_alpha.d
        local, used_spec, out_of_data = select_local_adaptive(
            global_data, alpha, base_spec, min_size=cfg.min_local_size
        )
        local_specs[i] = used_spec
        prediction = None
        explanation = None
        out_of_bounds = out_of_data
        if len(local) > 0:
            tree = fit(local, cfg.tree_params)
            explanation = explain(tree, alpha)
            prediction = explanation.predicted
            out_of_bounds = case2_out_of_bounds(alpha, hull_bounds(local))
            if prediction is Label.INTERFERE:
                any_interference = True
        human_reports.append(
            HumanReport(
                index=i,
                attributes=alpha,
                prediction=prediction,
                explanation=explanation,
                out_of_data=out_of_data,
                out_of_bounds=out_of_bounds,
                local_size=len(local),
            )
        )
    state.prev_distances = new_prev
    state.robot_prev_distances = new_robot_prev

    rules: list[CounterfactualRule] = []
    chosen_rule_index: Optional[int] = None
    chosen_action: Optional[ControlAction] = None
    action_source: Optional[str] = None

    if state.dwell_remaining > 0:
        state.dwell_remaining -= 1
    state.lambda_streak = state.lambda_streak + 1 if any_interference else 0

    # While committed to a recent correction, keep tracking the current ghost
    # rather than re-deriving a new action every tick; per-tick re-selection
    # flip-flops between near-tied rules and squanders the escape window.
    # A long unbroken run of interference predictions overrides the
    # commitment: the chosen action is evidently not working.
    committed = (
        any_interference
        and state.mode is PlannerMode.CORRECTING
        and state.ghost is not None
        and state.dwell_remaining > 0
        and state.lambda_streak <= ESCALATION_TICKS
    )
    if committed:
        state.clear_ticks = 0
    elif any_interference:
        state.clear_ticks = 0
        # Correction sets use their own, tighter radius: alternative actions
        # only discriminate when the human-side context is nearly identical.
        # Only the humans actually predicted to interfere contribute;
        # averaging in every bystander drowns out the imminent threat.
        corr_spec = base_spec.with_delta(cfg.correction_delta)
        correction_sets = {
            rep.index: select_correction_adaptive(
                global_data, robot_alphas[rep.index], corr_spec,
                min_size=cfg.min_local_size,
            )[0]
            for rep in human_reports
        }
        threat_sets = [
            correction_sets[rep.index]
            for rep in human_reports
            if rep.prediction is Label.INTERFERE
        ]
        # Subsampling is seeded by the run seed only, so consecutive ticks
        # see consistent ensembles and the chosen correction does not churn.
        combined = combine_ensemble(
            [s for s in threat_sets if len(s) > 0], seed=seed
        )
        # The correction tree gets a larger leaf floor than the prediction
        # trees: with e_n * r_n ranking, a tiny accidentally-pure leaf would
        # outrank every well-supported rule.
        correction_params = TreeParams(
            min_leaf_size=max(cfg.tree_params.min_leaf_size,
                              cfg.correction_min_leaf),
            max_depth=cfg.tree_params.max_depth,
            min_impurity_decrease=cfg.tree_params.min_impurity_decrease,
        )
        correction_tree = fit(
            combined, correction_params, allowed_attributes=CORRECTION_ATTRIBUTES
        )
        # Per-human correction trees back the candidate screening below.
        # The local prediction trees cannot score hypothetical actions: their
        # training ball is centered on the *current* action, so a swapped
        # (velocity, lane) lands outside it and the tree just extrapolates.
        # Correction sets leave the controllable attributes unconstrained, so
        # a tree fit on one is valid over the whole action grid.
        veto_trees = {
            idx: fit(s, correction_params,
                     allowed_attributes=CORRECTION_ATTRIBUTES)
            for idx, s in correction_sets.items()
            if len(s) >= cfg.correction_min_leaf
        }
        rules = counterfactuals(correction_tree, Label.INTERFERE)
        current = ControlAction(
            v_r=robot.speed, lane=nearest_lane(robot.y, cfg.lanes)
        )
        # Candidate lanes are limited to one lane step from where the robot
        # actually is.  Training episodes start the robot already settled in
        # its lane, so the correction tree never sees the cost of a long
        # diagonal transition; bounding the step keeps that transition short,
        # and larger shifts still happen through successive corrections.
        robot_lane = nearest_lane(robot.y, cfg.lanes)
        reachable_lanes = tuple(
            l for l in cfg.lanes
            if abs(l - robot_lane) <= cfg.max_lane_step + 1e-9
        )
        # A rule minimizes pooled error, but the correction must not
        # interfere with *any* human: each candidate is screened by every
        # human's correction tree on the counterfactual attribute vector
        # (only the controllable attributes swapped).  The best-ranked
        # candidate with no interference votes wins; if all candidates draw
        # votes, the one with fewest is kept rather than doing nothing.
        def interference_votes(action: ControlAction) -> int:
            votes = 0
            for rep in human_reports:
                tree = veto_trees.get(rep.index)
                if tree is None:
                    continue
                counterfactual = np.array(robot_alphas[rep.index].as_array())
                counterfactual[6] = action.v_r
                counterfactual[7] = action.lane
                hypothetical = AttributeVector.from_array(counterfactual)
                if predict(tree, hypothetical) is Label.INTERFERE:
                    votes += 1
            return votes

        fallback: Optional[tuple[int, int, ControlAction]] = None
        for rule, idx in rank_counterfactuals(rules):
            try:
                candidate = instantiate_action(
                    rule, cfg.velocities, reachable_lanes, current
                )
            except InfeasibleRuleError:
                continue
            votes = interference_votes(candidate)
            if votes == 0:
                chosen_action = candidate
                chosen_rule_index = idx
                action_source = "counterfactual"
                break
            if fallback is None or votes < fallback[0]:
                fallback = (votes, idx, candidate)
        if chosen_action is None and fallback is not None:
            _, chosen_rule_index, chosen_action = fallback
            action_source = "counterfactual"
        if chosen_action is None and min(cfg.velocities) <= 0.0:
            # No rule yields a feasible action: halt in the current lane if
            # the screen clears it.  Holding still is the least committal
            # move and beats steering blind through a crowd.
            halt = ControlAction(v_r=min(cfg.velocities), lane=robot_lane)
            if interference_votes(halt) == 0:
                chosen_action = halt
                action_source = "halt"
        if chosen_action is None:
            try:
                chosen_action = random_unseen_action(
                    combined, cfg.velocities, reachable_lanes,
                    seed=hash(rng_key) % 2**32,
                )
                action_source = "random"
            except ActionsExhaustedError:
                state.mode = PlannerMode.FAILSAFE
                state.ghost = None
        if chosen_action is not None:
            # Respawn only on a genuinely new action; re-deriving the same
            # correction keeps the existing ghost (and its progress).
            if state.ghost is None or state.ghost.action != chosen_action:
                state.ghost = GhostTarget(
                    state=AgentState(
                        x=robot.x, y=chosen_action.lane, heading=0.0,
                        speed=chosen_action.v_r,
                    ),
                    action=chosen_action,
                    spawn_time=state.t,
                )
            state.dwell_remaining = cfg.dwell_ticks
            state.lambda_streak = 0
            state.mode = PlannerMode.CORRECTING
    else:
        # Only all-clear predictions made from the robot's own state count
        # toward ending a correction; while predictions come from the ghost
        # they describe the corrected plan, not the robot's actual situation.
        if provenance == "robot":
            state.clear_ticks += 1
        if (
            state.mode is PlannerMode.CORRECTING
            and state.clear_ticks >= CLEAR_TICKS_TO_REVERT
        ):
            state.mode = PlannerMode.NOMINAL
            state.ghost = None
        if state.mode is PlannerMode.FAILSAFE:
            # Recover once nothing in range predicts interference and no
            # human is inside the distance threshold.
            if all(robot.distance_to(h) > cfg.delta_th for _, h in in_range):
                state.mode = PlannerMode.NOMINAL

    if state.mode is PlannerMode.FAILSAFE:
        command = failsafe_command(robot, [h for _, h in in_range], cfg)
    elif state.mode is PlannerMode.CORRECTING and state.ghost is not None:
        # Catch-up speed is bounded by the larger of the corrective and
        # nominal velocities; racing at the grid maximum through a crowd to
        # reach a slow ghost defeats the correction.
        v_max = max(state.ghost.action.v_r, cfg.nominal_v)
        command = pure_pursuit(
            robot, state.ghost, cfg.lookahead, v_max=v_max, x_max=cfg.goal[0]
        )
    else:
        command = goal_seek_command(robot, cfg.goal, cfg.nominal_v)

    dt_op_ms = (time.perf_counter() - t0) * 1e3
    report = TickReport(
        t=state.t,
        mode=state.mode,
        provenance=provenance,
        humans=human_reports,
        counterfactual_rules=rules,
        chosen_rule_index=chosen_rule_index,
        chosen_action=chosen_action,
        action_source=action_source,
        command=command,
        dt_op_ms=dt_op_ms,
    )
    state.tick_index += 1
    state.t += cfg.tick
    return command, state, report

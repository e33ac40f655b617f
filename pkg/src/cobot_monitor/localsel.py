"""Neighborhood selection, ensemble combination, and counterfactual choice.

Local trees are trained only on samples near the current observation in
scaled attribute space.  Correction sets relax the robot-controlled
dimensions so the correction tree can compare alternative velocity/lane
pairs under the same human context.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from cobot_monitor.core import (
    CONTROL_ATTRIBUTE_INDICES,
    HUMAN_ATTRIBUTE_INDICES,
    N_ATTRIBUTES,
    AttributeVector,
    Dataset,
)
from cobot_monitor.dtree import CounterfactualRule


class NoCounterfactualError(ValueError):
    """No counterfactual rule is available; caller must fall back."""


class InfeasibleRuleError(ValueError):
    """No admissible (velocity, lane) pair satisfies the rule."""


class ActionsExhaustedError(ValueError):
    """Every admissible action already appears in the local data."""


@dataclass(frozen=True)
class LocalitySpec:
    """Radius and per-attribute scaling for neighborhood queries.

    The raw attributes mix meters, m/s, and degrees, so distances are taken
    after dividing each dimension by a positive weight (typically the global
    per-attribute standard deviation).
    """

    delta: float
    scaling: tuple[float, ...]

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if len(self.scaling) != N_ATTRIBUTES:
            raise ValueError(f"scaling needs {N_ATTRIBUTES} weights")
        if any(w <= 0 for w in self.scaling):
            raise ValueError("scaling weights must be positive")

    def with_delta(self, delta: float) -> "LocalitySpec":
        return LocalitySpec(delta=delta, scaling=self.scaling)

    @classmethod
    def from_dataset(cls, data: Dataset, delta: float = 1.5) -> "LocalitySpec":
        """Scale by the per-attribute standard deviation of the dataset.

        Degenerate (constant) attributes get weight 1 so they never block a
        match.
        """
        std = data.matrix.std(axis=0)
        std = np.where(std > 1e-12, std, 1.0)
        return cls(delta=delta, scaling=tuple(float(s) for s in std))


@dataclass(frozen=True)
class ControlAction:
    """Robot-side attributes the planner can actually set."""

    v_r: float   # m/s
    lane: float  # m


def _scaled_distances(
    data: Dataset,
    alpha: AttributeVector,
    spec: LocalitySpec,
    dims: Sequence[int],
) -> np.ndarray:
    diff = (data.matrix - alpha.as_array()) / np.asarray(spec.scaling)
    return np.linalg.norm(diff[:, list(dims)], axis=1)


def select_local(data: Dataset, alpha: AttributeVector, spec: LocalitySpec) -> Dataset:
    """Samples within scaled distance delta of alpha, original order kept."""
    dist = _scaled_distances(data, alpha, spec, range(N_ATTRIBUTES))
    return data.subset(np.nonzero(dist <= spec.delta)[0])


#: Attributes matched when building a correction set.  The distance
#: derivative is deliberately excluded: it is measured under the robot's
#: *current* velocity, the very thing a correction changes, so matching on
#: it would bias every alternative-action neighborhood toward geometries
#: that produced the current closing rate.
CORRECTION_MATCH_INDICES = (0, 1, 2, 3, 5)


def select_correction_set(
    data: Dataset, alpha: AttributeVector, spec: LocalitySpec
) -> Dataset:
    """Neighborhood over the robot-independent attributes only.

    Robot velocity and lane are unconstrained, so the result contains every
    alternative action recorded for similar human contexts; it is always a
    superset of :func:`select_local` at the same spec.
    """
    dist = _scaled_distances(data, alpha, spec, CORRECTION_MATCH_INDICES)
    return data.subset(np.nonzero(dist <= spec.delta)[0])


def select_local_adaptive(
    data: Dataset,
    alpha: AttributeVector,
    spec: LocalitySpec,
    min_size: int = 30,
    growth: float = 1.5,
    max_growths: int = 4,
) -> tuple[Dataset, LocalitySpec, bool]:
    """Grow delta geometrically until the local set is big enough.

    Returns (local set, spec actually used, out_of_data flag).  The flag is
    set when the set is still empty after all growth steps.
    """
    current = spec
    local = select_local(data, alpha, current)
    for _ in range(max_growths):
        if len(local) >= min_size:
            break
        current = current.with_delta(current.delta * growth)
        local = select_local(data, alpha, current)
    return local, current, len(local) == 0


def select_correction_adaptive(
    data: Dataset,
    alpha: AttributeVector,
    spec: LocalitySpec,
    min_size: int = 30,
    growth: float = 1.5,
    max_growths: int = 4,
) -> tuple[Dataset, LocalitySpec]:
    """Correction-set variant of :func:`select_local_adaptive`."""
    current = spec
    selected = select_correction_set(data, alpha, current)
    for _ in range(max_growths):
        if len(selected) >= min_size:
            break
        current = current.with_delta(current.delta * growth)
        selected = select_correction_set(data, alpha, current)
    return selected, current


def combine_ensemble(local_sets: Sequence[Dataset], seed: int = 0) -> Dataset:
    """Size-normalized union of per-human local sets.

    Every non-empty set is subsampled (uniform, without replacement, seeded)
    to the size of the smallest non-empty set, so no human dominates the
    combined correction data.
    """
    non_empty = [s for s in local_sets if len(s) > 0]
    if not non_empty:
        raise ValueError("all local sets are empty")
    target = min(len(s) for s in non_empty)
    rng = np.random.default_rng(seed)
    combined = Dataset()
    for s in non_empty:
        if len(s) == target:
            combined.extend(s)
        else:
            keep = np.sort(rng.choice(len(s), size=target, replace=False))
            combined.extend(s.subset(keep))
    return combined


def optimal_counterfactual(
    rules: Sequence[CounterfactualRule],
) -> tuple[CounterfactualRule, int]:
    """Rule minimizing leaf error x leaf risk.

    Ties break toward larger support, then lower rule index.
    """
    if not rules:
        raise NoCounterfactualError("no counterfactual rules available")
    best_idx = 0
    for i, rule in enumerate(rules[1:], start=1):
        best = rules[best_idx]
        product = rule.leaf_error * rule.leaf_risk
        best_product = best.leaf_error * best.leaf_risk
        if product < best_product - 1e-15:
            best_idx = i
        elif abs(product - best_product) <= 1e-15 and rule.support > best.support:
            best_idx = i
    return rules[best_idx], best_idx


def rank_counterfactuals(
    rules: Sequence[CounterfactualRule],
) -> list[tuple[CounterfactualRule, int]]:
    """All rules ordered best-first by the optimal_counterfactual criterion."""
    return sorted(
        [(r, i) for i, r in enumerate(rules)],
        key=lambda pair: (pair[0].leaf_error * pair[0].leaf_risk,
                          -pair[0].support, pair[1]),
    )


def _rule_admits(rule: CounterfactualRule, v: float, lane: float) -> bool:
    for clause in rule.clauses:
        value = v if clause.attribute == 6 else lane
        if clause.attribute not in CONTROL_ATTRIBUTE_INDICES:
            raise ValueError(
                f"correction rule constrains attribute {clause.attribute}, "
                "expected only v_r and lane"
            )
        if not clause.satisfied_by(value):
            return False
    return True


def instantiate_action(
    rule: CounterfactualRule,
    admissible_v: Sequence[float],
    admissible_lanes: Sequence[float],
    current: ControlAction,
) -> ControlAction:
    """Pick the admissible (velocity, lane) pair satisfying the rule that is
    closest to the current action.

    Cost is |v - v_current| + lane_gap * |lane - lane_current| with lane_gap
    the admissible lane spacing; ties resolve by scan order over the sorted
    grids, keeping the choice deterministic.
    """
    lanes = sorted(admissible_lanes)
    lane_gap = lanes[1] - lanes[0] if len(lanes) > 1 else 1.0
    best = None
    best_cost = np.inf
    for v in sorted(admissible_v):
        for lane in lanes:
            if not _rule_admits(rule, v, lane):
                continue
            cost = abs(v - current.v_r) + lane_gap * abs(lane - current.lane)
            if cost < best_cost - 1e-12:
                best = ControlAction(v_r=v, lane=lane)
                best_cost = cost
    if best is None:
        raise InfeasibleRuleError("no admissible pair satisfies the rule")
    return best


def random_unseen_action(
    local: Dataset,
    admissible_v: Sequence[float],
    admissible_lanes: Sequence[float],
    seed: int = 0,
) -> ControlAction:
    """Uniformly random admissible (velocity, lane) pair absent from the
    local data's recorded actions; exploration fallback when every recorded
    action interferes."""
    seen = set()
    if len(local) > 0:
        m = local.matrix
        seen = {(round(v, 9), round(l, 9)) for v, l in zip(m[:, 6], m[:, 7])}
    unseen = [
        (v, lane)
        for v in sorted(admissible_v)
        for lane in sorted(admissible_lanes)
        if (round(v, 9), round(lane, 9)) not in seen
    ]
    if not unseen:
        raise ActionsExhaustedError("every admissible action appears in local data")
    rng = np.random.default_rng(seed)
    v, lane = unseen[rng.integers(len(unseen))]
    return ControlAction(v_r=v, lane=lane)

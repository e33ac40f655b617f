"""Run-time dataset validation and updating.

Two triggers add samples to the global dataset after a run: distance
threshold violations (Case 1) and observations falling outside the local
training data's per-dimension bounds (Case 2).  Bound checks reduce to the
per-dimension extrema of the data, since extrema are always vertices of the
convex hull; an optional 3-D hull export exists for visualization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from cobot_monitor.core import (
    AttributeVector,
    Dataset,
    Label,
    LabeledSample,
    N_ATTRIBUTES,
)


@dataclass(frozen=True)
class HullBounds:
    """Per-attribute (min, max) over the convex hull of a local dataset.

    Computed directly as the per-dimension extrema of the samples, which
    coincide with the extrema of the hull vertex set.
    """

    minimum: tuple[float, ...]
    maximum: tuple[float, ...]


def hull_bounds(local: Dataset) -> HullBounds:
    if len(local) == 0:
        raise ValueError("cannot bound an empty dataset")
    lo, hi = local.attribute_bounds
    return HullBounds(minimum=tuple(map(float, lo)), maximum=tuple(map(float, hi)))


def case2_out_of_bounds(alpha: AttributeVector, bounds: HullBounds) -> bool:
    """True iff any attribute falls strictly outside [min, max]."""
    values = alpha.as_array()
    for v, lo, hi in zip(values, bounds.minimum, bounds.maximum):
        if v < lo or v > hi:
            return True
    return False


def case1_violation(
    distances: np.ndarray, delta_th: float
) -> list[tuple[int, int]]:
    """All (tick, human index) pairs where the pair distance is below the
    threshold.  ``distances`` is a (ticks, humans) array; NaN entries (human
    absent) never trigger."""
    distances = np.asarray(distances, dtype=float)
    if distances.ndim != 2:
        raise ValueError("distances must be a (ticks, humans) array")
    hits = np.argwhere(
        np.logical_and(~np.isnan(distances), distances < delta_th)
    )
    return [(int(t), int(h)) for t, h in hits]


def _rounded_key(alpha: AttributeVector) -> tuple[float, ...]:
    # 1e-6 rounding: exact-duplicate suppression without float jitter.
    return tuple(round(v, 6) for v in alpha.as_array())


@dataclass
class UpdateRecord:
    """One appended sample with its provenance, for the update log."""

    sample: LabeledSample
    case: str          # "case1" or "case2"
    tick: int
    human: int

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "tick": self.tick,
            "human": self.human,
            "attributes": list(self.sample.attributes.as_array()),
            "label": self.sample.label.to_int(),
        }


def apply_updates(
    global_data: Dataset,
    attribute_log: Mapping[tuple[int, int], AttributeVector],
    distances: np.ndarray,
    case1_hits: Sequence[tuple[int, int]],
    case2_hits: Sequence[tuple[int, int]],
    horizon_ticks: int,
    delta_th: float,
) -> tuple[Dataset, list[UpdateRecord]]:
    """Grow the dataset from one run's violations and unmodeled observations.

    Case 1 appends the attribute vectors recorded in the window from
    ``horizon_ticks`` before each human's first violation through their last
    violation, labeled INTERFERE.  Case 2 appends out-of-bounds observations
    labeled retrospectively by the training rule: INTERFERE iff the pair
    distance dips below the threshold within the labeling horizon.  Exact
    duplicates (after 1e-6 rounding) are never re-added, so the update is
    idempotent.
    """
    distances = np.asarray(distances, dtype=float)
    existing = {_rounded_key(s.attributes) for s in global_data}
    updated = Dataset(global_data)
    records: list[UpdateRecord] = []

    def add(alpha: AttributeVector, label: Label, case: str, tick: int, human: int):
        key = _rounded_key(alpha)
        if key in existing:
            return
        existing.add(key)
        sample = LabeledSample(alpha, label)
        updated.append(sample)
        records.append(UpdateRecord(sample=sample, case=case, tick=tick, human=human))

    # Case 1: violation windows, labeled INTERFERE.
    by_human: dict[int, list[int]] = {}
    for t, h in case1_hits:
        by_human.setdefault(h, []).append(t)
    for h in sorted(by_human):
        ticks = sorted(by_human[h])
        start = max(0, ticks[0] - horizon_ticks)
        for t in range(start, ticks[-1] + 1):
            alpha = attribute_log.get((t, h))
            if alpha is not None:
                add(alpha, Label.INTERFERE, "case1", t, h)

    # Case 2: out-of-bounds observations, labeled retrospectively.
    for t, h in sorted(case2_hits):
        alpha = attribute_log.get((t, h))
        if alpha is None:
            continue
        window = distances[t : t + horizon_ticks + 1, h]
        window = window[~np.isnan(window)]
        interferes = len(window) > 0 and float(window.min()) <= delta_th
        add(
            alpha,
            Label.INTERFERE if interferes else Label.NOT_INTERFERE,
            "case2",
            t,
            h,
        )

    return updated, records


def hull_export_3d(
    local: Dataset, attribute_triple: Sequence[int]
) -> Optional[dict]:
    """Vertex/face lists of the 3-D convex hull over a chosen attribute
    triple, for plotting.  Returns None when the points are degenerate."""
    if len(attribute_triple) != 3:
        raise ValueError("need exactly three attribute indices")
    if any(not 0 <= i < N_ATTRIBUTES for i in attribute_triple):
        raise ValueError("attribute index out of range")
    points = local.matrix[:, list(attribute_triple)]
    if len(points) < 4:
        return None
    from scipy.spatial import ConvexHull, QhullError

    try:
        hull = ConvexHull(points)
    except QhullError:
        return None
    return {
        "attributes": list(attribute_triple),
        "vertices": points[hull.vertices].tolist(),
        "faces": hull.simplices.tolist(),
    }

"""Binary CART induction with Gini splitting.

Trees are grown greedily: every internal node takes the (attribute,
threshold) pair with the largest Gini impurity decrease, with candidate
thresholds at midpoints between consecutive distinct values.  The split
convention is ``attribute < threshold`` goes left.  Leaves keep their class
counts so downstream counterfactual ranking can read off node error and
node risk.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from cobot_monitor.core import (
    ATTRIBUTE_NAMES,
    N_ATTRIBUTES,
    AttributeVector,
    Dataset,
    Label,
)


@dataclass(frozen=True)
class TreeParams:
    min_leaf_size: int = 5
    max_depth: int = 8
    min_impurity_decrease: float = 1e-4

    def __post_init__(self):
        if self.min_leaf_size < 1:
            raise ValueError("min_leaf_size must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")


@dataclass
class Leaf:
    label: Label
    counts: tuple[int, int]   # (n_interfere, n_not_interfere)
    error: float              # fraction of samples disagreeing with label
    risk: float               # Gini impurity of the class fractions

    @property
    def support(self) -> int:
        return self.counts[0] + self.counts[1]


@dataclass
class Internal:
    attribute: int
    threshold: float
    left: "TreeNode"          # samples with attribute < threshold
    right: "TreeNode"         # samples with attribute >= threshold
    n_samples: int
    impurity_decrease: float


TreeNode = Union[Leaf, Internal]


@dataclass
class Tree:
    root: TreeNode
    training_size: int
    params: TreeParams


@dataclass(frozen=True)
class ExplanationClause:
    """Interval constraint on one attribute along a decision path."""

    attribute: int
    lower: Optional[float] = None   # from '>=' splits, inclusive
    upper: Optional[float] = None   # from '<' splits, exclusive

    def __post_init__(self):
        if self.lower is None and self.upper is None:
            raise ValueError("clause needs at least one bound")
        if self.lower is not None and self.upper is not None:
            if not self.lower < self.upper:
                raise ValueError("interval lower bound must be below upper")

    def satisfied_by(self, value: float) -> bool:
        if self.lower is not None and value < self.lower:
            return False
        if self.upper is not None and value >= self.upper:
            return False
        return True

    def __str__(self) -> str:
        name = ATTRIBUTE_NAMES[self.attribute]
        if self.lower is not None and self.upper is not None:
            return f"{self.lower:g} <= {name} < {self.upper:g}"
        if self.upper is not None:
            return f"{name} < {self.upper:g}"
        return f"{name} >= {self.lower:g}"


@dataclass
class Explanation:
    predicted: Label
    clauses: list[ExplanationClause]

    def satisfied_by(self, alpha: AttributeVector) -> bool:
        return all(c.satisfied_by(alpha[c.attribute]) for c in self.clauses)


@dataclass
class CounterfactualRule:
    """Path conditions to a leaf of the opposite class."""

    clauses: list[ExplanationClause]
    leaf_label: Label
    leaf_error: float
    leaf_risk: float
    support: int

    def satisfied_by(self, alpha: AttributeVector) -> bool:
        return all(c.satisfied_by(alpha[c.attribute]) for c in self.clauses)


def gini(n_pos: int, n_neg: int) -> float:
    """Gini impurity of a binary count pair."""
    n = n_pos + n_neg
    if n == 0:
        return 0.0
    p = n_pos / n
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


def _make_leaf(y: np.ndarray) -> Leaf:
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    # Tie goes to INTERFERE, the conservative class.
    label = Label.INTERFERE if n_pos >= n_neg else Label.NOT_INTERFERE
    majority = n_pos if label is Label.INTERFERE else n_neg
    error = 1.0 - majority / len(y)
    return Leaf(label=label, counts=(n_pos, n_neg), error=error, risk=gini(n_pos, n_neg))


def _best_split(
    X: np.ndarray,
    y: np.ndarray,
    attributes: Sequence[int],
    min_leaf_size: int,
) -> Optional[tuple[int, float, float]]:
    """Best (attribute, threshold, impurity decrease) or None.

    Ties break by lowest attribute index, then lowest threshold (attributes
    scanned ascending; within one attribute the first maximum is the lowest
    threshold).
    """
    n = len(y)
    parent = gini(int(y.sum()), n - int(y.sum()))
    best = None
    best_decrease = 0.0
    for attr in sorted(attributes):
        col = X[:, attr]
        order = np.argsort(col, kind="stable")
        sv = col[order]
        sy = y[order]
        cum_pos = np.cumsum(sy)
        # Candidate split after position i: left = first i+1 samples.
        idx = np.nonzero(sv[:-1] < sv[1:])[0]
        if len(idx) == 0:
            continue
        n_left = idx + 1
        n_right = n - n_left
        ok = (n_left >= min_leaf_size) & (n_right >= min_leaf_size)
        if not ok.any():
            continue
        idx = idx[ok]
        n_left = n_left[ok]
        n_right = n_right[ok]
        pos_left = cum_pos[idx]
        pos_right = int(y.sum()) - pos_left
        p_l = pos_left / n_left
        p_r = pos_right / n_right
        gini_l = 1.0 - p_l**2 - (1.0 - p_l) ** 2
        gini_r = 1.0 - p_r**2 - (1.0 - p_r) ** 2
        decrease = parent - (n_left / n) * gini_l - (n_right / n) * gini_r
        k = int(np.argmax(decrease))
        if decrease[k] > best_decrease:
            best_decrease = float(decrease[k])
            threshold = 0.5 * (sv[idx[k]] + sv[idx[k] + 1])
            best = (attr, float(threshold), best_decrease)
    return best


def _grow(
    X: np.ndarray,
    y: np.ndarray,
    depth: int,
    params: TreeParams,
    attributes: Sequence[int],
) -> TreeNode:
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y) or depth >= params.max_depth:
        return _make_leaf(y)
    split = _best_split(X, y, attributes, params.min_leaf_size)
    if split is None or split[2] < params.min_impurity_decrease:
        return _make_leaf(y)
    attr, threshold, decrease = split
    mask = X[:, attr] < threshold
    # Guard against degenerate midpoints between near-equal floats.
    if not mask.any() or mask.all():
        return _make_leaf(y)
    return Internal(
        attribute=attr,
        threshold=threshold,
        left=_grow(X[mask], y[mask], depth + 1, params, attributes),
        right=_grow(X[~mask], y[~mask], depth + 1, params, attributes),
        n_samples=len(y),
        impurity_decrease=decrease,
    )


def fit(
    data: Dataset,
    params: TreeParams = TreeParams(),
    allowed_attributes: Optional[Sequence[int]] = None,
) -> Tree:
    """Grow a CART on a labeled dataset.

    ``allowed_attributes`` restricts split candidates to a subset of
    attribute indices (used by the correction tree, which may only split on
    robot velocity and lane).
    """
    if len(data) == 0:
        raise ValueError("cannot fit a tree on an empty dataset")
    attributes = (
        tuple(range(N_ATTRIBUTES)) if allowed_attributes is None
        else tuple(sorted(allowed_attributes))
    )
    root = _grow(data.matrix, data.labels, 0, params, attributes)
    return Tree(root=root, training_size=len(data), params=params)


def _descend(tree: Tree, alpha: AttributeVector):
    """Yield (node, went_left) pairs along alpha's path; ends at the leaf."""
    node = tree.root
    values = alpha.as_array()
    while isinstance(node, Internal):
        left = values[node.attribute] < node.threshold
        yield node, left
        node = node.left if left else node.right
    yield node, None


def predict(tree: Tree, alpha: AttributeVector) -> Label:
    for node, _ in _descend(tree, alpha):
        pass
    return node.label


def _merge_path(path: list[tuple[int, bool, float]]) -> list[ExplanationClause]:
    """Merge raw (attribute, went_left, threshold) triples into the tightest
    interval per attribute, ordered by first appearance on the path."""
    lower: dict[int, float] = {}
    upper: dict[int, float] = {}
    order: list[int] = []
    for attr, left, threshold in path:
        if attr not in order:
            order.append(attr)
        if left:
            upper[attr] = min(upper.get(attr, np.inf), threshold)
        else:
            lower[attr] = max(lower.get(attr, -np.inf), threshold)
    return [
        ExplanationClause(
            attribute=attr, lower=lower.get(attr), upper=upper.get(attr)
        )
        for attr in order
    ]


def explain(tree: Tree, alpha: AttributeVector) -> Explanation:
    """Explanation = merged split conditions along alpha's root-to-leaf path."""
    path = []
    leaf_label = None
    for node, left in _descend(tree, alpha):
        if isinstance(node, Internal):
            path.append((node.attribute, left, node.threshold))
        else:
            leaf_label = node.label
    return Explanation(predicted=leaf_label, clauses=_merge_path(path))


def counterfactuals(tree: Tree, predicted: Label) -> list[CounterfactualRule]:
    """One rule per leaf labeled with the opposite class, in left-to-right
    tree order; empty when no such leaf exists."""
    target = predicted.opposite()
    rules: list[CounterfactualRule] = []

    def walk(node: TreeNode, path: list[tuple[int, bool, float]]):
        if isinstance(node, Leaf):
            if node.label is target:
                rules.append(
                    CounterfactualRule(
                        clauses=_merge_path(path),
                        leaf_label=node.label,
                        leaf_error=node.error,
                        leaf_risk=node.risk,
                        support=node.support,
                    )
                )
            return
        walk(node.left, path + [(node.attribute, True, node.threshold)])
        walk(node.right, path + [(node.attribute, False, node.threshold)])

    walk(tree.root, [])
    return rules


def predictor_importance(tree: Tree) -> np.ndarray:
    """Per-attribute importance, normalized to sum to 1 (zeros if no splits).

    Each internal node contributes (node sample fraction x impurity
    decrease) to the attribute it splits on.
    """
    raw = np.zeros(N_ATTRIBUTES)
    n_root = tree.training_size

    def walk(node: TreeNode):
        if isinstance(node, Internal):
            raw[node.attribute] += (node.n_samples / n_root) * node.impurity_decrease
            walk(node.left)
            walk(node.right)

    walk(tree.root)
    total = raw.sum()
    return raw / total if total > 0 else raw


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

def _clauses_text(clauses: Sequence[ExplanationClause]) -> str:
    return "{" + ", ".join(str(c) for c in clauses) + "}"


def format_explanation(explanation: Explanation) -> str:
    """Rule text, e.g. ``Interfering because: {d' < 0.24, d_x < 1.76}``."""
    head = (
        "Interfering" if explanation.predicted is Label.INTERFERE
        else "Not Interfering"
    )
    if not explanation.clauses:
        return f"{head} because: {{}}"
    return f"{head} because: {_clauses_text(explanation.clauses)}"


def format_counterfactuals(rules: Sequence[CounterfactualRule]) -> str:
    """Disjunction text, e.g. ``Not Interfering when: {...} ∨ {...}``."""
    if not rules:
        return "(no counterfactual rules)"
    head = (
        "Interfering" if rules[0].leaf_label is Label.INTERFERE
        else "Not Interfering"
    )
    body = " ∨ ".join(_clauses_text(r.clauses) for r in rules)
    return f"{head} when: {body}"


def _node_to_dict(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {
            "type": "leaf",
            "label": node.label.to_int(),
            "counts": list(node.counts),
            "error": node.error,
            "risk": node.risk,
        }
    return {
        "type": "internal",
        "attribute": node.attribute,
        "attribute_name": ATTRIBUTE_NAMES[node.attribute],
        "threshold": node.threshold,
        "n_samples": node.n_samples,
        "impurity_decrease": node.impurity_decrease,
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def tree_to_json(tree: Tree, indent: Optional[int] = None) -> str:
    """Machine-readable dump of the full tree structure."""
    payload = {
        "training_size": tree.training_size,
        "params": {
            "min_leaf_size": tree.params.min_leaf_size,
            "max_depth": tree.params.max_depth,
            "min_impurity_decrease": tree.params.min_impurity_decrease,
        },
        "root": _node_to_dict(tree.root),
    }
    return json.dumps(payload, indent=indent)


def tree_attributes_used(tree: Tree) -> set[int]:
    """Set of attribute indices appearing in any internal node."""
    used: set[int] = set()

    def walk(node: TreeNode):
        if isinstance(node, Internal):
            used.add(node.attribute)
            walk(node.left)
            walk(node.right)

    walk(tree.root)
    return used

"""Interpretable interference monitor for mobile robots among pedestrians.

Decision trees predict whether the robot will force nearby humans off their
intended paths, explain why, and derive actionable velocity/lane corrections
that a ghost-target pure-pursuit controller executes.  A validation layer
feeds surprising run-time observations back into the training dataset.
"""

from cobot_monitor.core import (
    AgentState,
    AttributeVector,
    Dataset,
    Label,
    LabeledSample,
    compute_attributes,
    load_dataset,
    save_dataset,
)
from cobot_monitor.dtree import Tree, TreeParams, fit, predict, explain, counterfactuals
from cobot_monitor.localsel import ControlAction, LocalitySpec

__all__ = [
    "AgentState",
    "AttributeVector",
    "Dataset",
    "Label",
    "LabeledSample",
    "compute_attributes",
    "load_dataset",
    "save_dataset",
    "Tree",
    "TreeParams",
    "fit",
    "predict",
    "explain",
    "counterfactuals",
    "ControlAction",
    "LocalitySpec",
]

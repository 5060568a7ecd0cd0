"""The configuration energy: appearance plus multi-level exemplar terms.

A configuration X is scored as

    total = sum_i w_i * log p(part_i | x_i)                   (appearance)
          + sum_nodes [pose_appearance * log-pose-prob
                       + pose_similarity * alignment score]   (spatial)
          + bias

which is linear in the weights, so the same quantities double as the
feature vector used for max-margin training.  Hypotheses produced during
inference are scored by the recursive subtree form of the spatial sum, and
candidate refinements by a separable approximation that freezes everything
except the atomic appearance terms and the level-2 alignment penalties.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .appearance import (
    ScoreMapStack,
    log_part_prob,
    log_pose_prob_atomic,
    log_pose_prob_composite,
)
from .geometry import AngleBound, child_geometry, pose_similarity
from .hierarchy import PartHierarchy, object_size
from .learning import ExemplarLibrary, TrainingSet

__all__ = [
    "WeightVector",
    "save_weights",
    "load_weights",
    "appearance_score",
    "best_fit_pose",
    "pose_score",
    "spatial_score",
    "total_score",
    "subtree_score",
    "refinement_score",
    "feature_vector",
    "feature_length",
    "build_training_set",
]


@dataclass
class WeightVector:
    """Scoring weights: per-atom appearance, per-node pose terms, and a bias.

    All components except the bias are non-negative.  Array components are
    aligned to the hierarchy's canonical atomic/composite orders.
    """

    atomic: np.ndarray
    pose_appearance: np.ndarray
    pose_similarity: np.ndarray
    bias: float = 0.0

    def __post_init__(self):
        self.atomic = np.asarray(self.atomic, dtype=float)
        self.pose_appearance = np.asarray(self.pose_appearance, dtype=float)
        self.pose_similarity = np.asarray(self.pose_similarity, dtype=float)
        if self.pose_appearance.shape != self.pose_similarity.shape:
            raise ValueError("pose weight arrays must have matching shapes")
        for name in ("atomic", "pose_appearance", "pose_similarity"):
            values = getattr(self, name)
            if values.ndim != 1:
                raise ValueError(f"{name} weights must be 1-D")
            if np.any(values < 0):
                raise ValueError(f"{name} weights must be non-negative")

    @classmethod
    def uniform(cls, hierarchy: PartHierarchy, atomic: float = 1.0,
                pose_appearance: float = 1.0, pose_similarity: float = 1.0,
                bias: float = 0.0) -> "WeightVector":
        n, c = hierarchy.atomic_count, len(hierarchy.composite_nodes)
        return cls(np.full(n, atomic), np.full(c, pose_appearance),
                   np.full(c, pose_similarity), bias)

    def as_array(self) -> np.ndarray:
        """Flat layout matching the feature vector: atoms, node pairs, bias."""
        pairs = np.empty(2 * len(self.pose_appearance))
        pairs[0::2] = self.pose_appearance
        pairs[1::2] = self.pose_similarity
        return np.concatenate([self.atomic, pairs, [self.bias]])

    @classmethod
    def from_array(cls, values: np.ndarray, hierarchy: PartHierarchy) -> "WeightVector":
        values = np.asarray(values, dtype=float)
        n, c = hierarchy.atomic_count, len(hierarchy.composite_nodes)
        if values.shape != (n + 2 * c + 1,):
            raise ValueError(f"weight array must have length {n + 2 * c + 1}")
        pairs = values[n:-1]
        return cls(values[:n], pairs[0::2], pairs[1::2], float(values[-1]))

    def node_weights(self, hierarchy: PartHierarchy, node_id: int) -> tuple[float, float]:
        for i, node in enumerate(hierarchy.composite_nodes):
            if node.id == node_id:
                return float(self.pose_appearance[i]), float(self.pose_similarity[i])
        raise KeyError(f"node {node_id} is not composite")

    def to_json(self, hierarchy: PartHierarchy) -> str:
        doc = {
            "bias": self.bias,
            "atomic": {
                name: float(self.atomic[i]) for i, name in enumerate(hierarchy.atomic_names)
            },
            "pose_appearance": {
                node.name: float(self.pose_appearance[i])
                for i, node in enumerate(hierarchy.composite_nodes)
            },
            "pose_similarity": {
                node.name: float(self.pose_similarity[i])
                for i, node in enumerate(hierarchy.composite_nodes)
            },
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str, hierarchy: PartHierarchy) -> "WeightVector":
        doc = json.loads(text)
        atomic = np.array([doc["atomic"][name] for name in hierarchy.atomic_names])
        pose_app = np.array(
            [doc["pose_appearance"][n.name] for n in hierarchy.composite_nodes]
        )
        pose_sim = np.array(
            [doc["pose_similarity"][n.name] for n in hierarchy.composite_nodes]
        )
        return cls(atomic, pose_app, pose_sim, float(doc["bias"]))


def save_weights(weights: WeightVector, hierarchy: PartHierarchy, path) -> None:
    Path(path).write_text(weights.to_json(hierarchy))


def load_weights(path, hierarchy: PartHierarchy) -> WeightVector:
    return WeightVector.from_json(Path(path).read_text(), hierarchy)


# -- scoring -----------------------------------------------------------------


def appearance_score(
    X: np.ndarray, stack: ScoreMapStack, hierarchy: PartHierarchy, weights: WeightVector
) -> float:
    """Weighted sum of atomic part detection log-probabilities."""
    scale = hierarchy.scale_factor(X, 1)
    total = 0.0
    for i, part in enumerate(hierarchy.atomic_ids):
        w = float(weights.atomic[i])
        if w != 0.0:
            total += w * log_part_prob(stack, part, X[i], scale)
    return total


def best_fit_pose(
    X: np.ndarray,
    node_id: int,
    library: ExemplarLibrary,
    hierarchy: PartHierarchy,
    bound: AngleBound | float | None = None,
) -> tuple[int, float]:
    """Exemplar of the node whose pose best matches X (ties: lowest index)."""
    exemplars = library.exemplars(node_id)
    if not exemplars:
        raise ValueError(f"empty exemplar library for node {node_id}")
    current = child_geometry(X, node_id, hierarchy)
    best_index, best_value = -1, -np.inf
    for ex in exemplars:
        value = pose_similarity(current, ex.geometry, bound)
        if value > best_value:
            best_index, best_value = ex.index, value
    return best_index, best_value


def _pose_terms(
    locations: np.ndarray,
    node_id: int,
    exemplar,
    stack: ScoreMapStack,
    hierarchy: PartHierarchy,
    size: float,
    bound: AngleBound | float | None,
) -> tuple[float, float]:
    """(log-pose-probability, alignment score) of a node against an exemplar."""
    node = hierarchy.node(node_id)
    current = child_geometry(locations, node_id, hierarchy)
    similarity = pose_similarity(current, exemplar.geometry, bound)
    scale = hierarchy.scale.factor_from_size(size, node.level - 1)
    parts = list(node.children)
    labels = [exemplar.child_labels[c] for c in parts]
    if node.level == 2:
        points = [locations[hierarchy.atom_index(c)] for c in parts]
        log_prob = log_pose_prob_atomic(stack, parts, labels, points, scale)
    else:
        anchors = [hierarchy.anchor_point(locations, c) for c in parts]
        log_prob = log_pose_prob_composite(stack, parts, labels, anchors, scale)
    return log_prob, similarity


def pose_score(
    X: np.ndarray,
    node_id: int,
    stack: ScoreMapStack,
    hierarchy: PartHierarchy,
    library: ExemplarLibrary,
    weights: WeightVector,
    bound: AngleBound | float | None = None,
    exemplar_index: int | None = None,
) -> float:
    """One node's spatial term: weighted pose probability plus similarity."""
    w_app, w_sim = weights.node_weights(hierarchy, node_id)
    if w_app == 0.0 and w_sim == 0.0:
        return 0.0
    if exemplar_index is None:
        exemplar_index, _ = best_fit_pose(X, node_id, library, hierarchy, bound)
    exemplar = library.get(node_id, exemplar_index)
    log_prob, similarity = _pose_terms(
        X, node_id, exemplar, stack, hierarchy, object_size(X), bound
    )
    return w_app * log_prob + w_sim * similarity


def spatial_score(
    X: np.ndarray,
    stack: ScoreMapStack,
    hierarchy: PartHierarchy,
    library: ExemplarLibrary,
    weights: WeightVector,
    bound: AngleBound | float | None = None,
) -> float:
    """Sum of the spatial terms of every composite node, with best-fit poses."""
    return sum(
        pose_score(X, node.id, stack, hierarchy, library, weights, bound)
        for node in hierarchy.composite_nodes
    )


def total_score(
    X: np.ndarray,
    stack: ScoreMapStack,
    hierarchy: PartHierarchy,
    library: ExemplarLibrary,
    weights: WeightVector,
    bound: AngleBound | float | None = None,
) -> float:
    """Full configuration energy: appearance + spatial + bias."""
    return (
        appearance_score(X, stack, hierarchy, weights)
        + spatial_score(X, stack, hierarchy, library, weights, bound)
        + weights.bias
    )


def subtree_score(
    hypothesis,
    stack: ScoreMapStack,
    hierarchy: PartHierarchy,
    library: ExemplarLibrary,
    weights: WeightVector,
    bound: AngleBound | float | None = None,
) -> float:
    """Recursive score of a hypothesis subtree using its stored poses.

    Atomic hypotheses score zero; a composite hypothesis adds its own spatial
    term (with the stored exemplar, not a re-fit) to its children's scores.
    """

    def recurse(node_id: int) -> float:
        node = hierarchy.node(node_id)
        if node.is_atomic:
            return 0.0
        total = sum(recurse(child) for child in node.children)
        w_app, w_sim = weights.node_weights(hierarchy, node_id)
        exemplar_index = hypothesis.pose.get(node_id)
        if exemplar_index is None:
            raise ValueError(f"hypothesis subtree is missing a pose for node {node_id}")
        exemplar = library.get(node_id, exemplar_index)
        log_prob, similarity = _pose_terms(
            hypothesis.locations, node_id, exemplar, stack, hierarchy,
            hypothesis.object_size, bound,
        )
        return total + w_app * log_prob + w_sim * similarity

    return recurse(hypothesis.node_id)


def refinement_score(
    X_hat: np.ndarray,
    root_hypothesis,
    stack: ScoreMapStack,
    hierarchy: PartHierarchy,
    weights: WeightVector,
) -> float:
    """Separable approximation of the total score around a root hypothesis.

    Appearance terms are live (at the scale frozen from the hypothesis);
    level-2 alignment terms are penalties against the hypothesis's own
    locations (alignment frozen, not re-fit); everything else, including the
    hypothesis subtree score and the bias, is the frozen constant.
    """
    if not np.isfinite(root_hypothesis.score):
        raise ValueError("root hypothesis must be scored before refinement")
    scale = hierarchy.scale.factor_from_size(root_hypothesis.object_size, 1)
    total = 0.0
    for i, part in enumerate(hierarchy.atomic_ids):
        w = float(weights.atomic[i])
        if w != 0.0:
            total += w * log_part_prob(stack, part, X_hat[i], scale)
    for node in hierarchy.nodes_at_level(2):
        _, w_sim = weights.node_weights(hierarchy, node.id)
        if w_sim == 0.0:
            continue
        rows = hierarchy.atom_rows(node.id)
        drift = X_hat[rows] - root_hypothesis.locations[rows]
        total -= w_sim * float(np.sum(drift * drift))
    return total + root_hypothesis.score + weights.bias


# -- features -----------------------------------------------------------------


def feature_length(hierarchy: PartHierarchy) -> int:
    return hierarchy.atomic_count + 2 * len(hierarchy.composite_nodes) + 1


def feature_vector(
    X: np.ndarray,
    stack: ScoreMapStack,
    hierarchy: PartHierarchy,
    library: ExemplarLibrary,
    bound: AngleBound | float | None = None,
) -> np.ndarray:
    """Per-atom log-probabilities, per-node (log-pose-prob, similarity) pairs,
    and a trailing constant 1, so that total_score == <weights, features>."""
    out = np.empty(feature_length(hierarchy))
    scale = hierarchy.scale_factor(X, 1)
    for i, part in enumerate(hierarchy.atomic_ids):
        out[i] = log_part_prob(stack, part, X[i], scale)
    size = object_size(X)
    offset = hierarchy.atomic_count
    for node in hierarchy.composite_nodes:
        exemplar_index, _ = best_fit_pose(X, node.id, library, hierarchy, bound)
        exemplar = library.get(node.id, exemplar_index)
        log_prob, similarity = _pose_terms(
            X, node.id, exemplar, stack, hierarchy, size, bound
        )
        out[offset] = log_prob
        out[offset + 1] = similarity
        offset += 2
    out[-1] = 1.0
    return out


def build_training_set(
    positives,
    negatives,
    stack: ScoreMapStack,
    hierarchy: PartHierarchy,
    library: ExemplarLibrary,
    bound: AngleBound | float | None = None,
) -> TrainingSet:
    """Feature rows for annotated configurations with +/-1 labels."""
    rows, labels = [], []
    for ann, label in [(a, 1.0) for a in positives] + [(a, -1.0) for a in negatives]:
        rows.append(feature_vector(ann.points, stack, hierarchy, library, bound))
        labels.append(label)
    if not rows:
        raise ValueError("no training samples")
    return TrainingSet(np.array(rows), np.array(labels))

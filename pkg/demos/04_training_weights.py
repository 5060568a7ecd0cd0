"""Train scoring weights from synthetic annotations.

Shows the training pipeline: relation-type model, exemplar library,
positive augmentation, negative synthesis, feature extraction, and
max-margin training with non-negativity constraints.
"""

import numpy as np

from hierpose import (
    Annotation,
    RelationTypeModel,
    augment_positives,
    build_library,
    generate_negatives,
    load_hierarchy,
    train_weights,
)
from hierpose.scoring import WeightVector, build_training_set
from hierpose.synth import make_scene

HIERARCHY = {
    "levels": 3,
    "nodes": [
        {"id": 1, "name": "la", "level": 1, "children": [], "anchor": None},
        {"id": 2, "name": "lb", "level": 1, "children": [], "anchor": None},
        {"id": 3, "name": "lc", "level": 1, "children": [], "anchor": None},
        {"id": 4, "name": "ra", "level": 1, "children": [], "anchor": None},
        {"id": 5, "name": "rb", "level": 1, "children": [], "anchor": None},
        {"id": 6, "name": "rc", "level": 1, "children": [], "anchor": None},
        {"id": 10, "name": "left", "level": 2, "children": [1, 2, 3], "anchor": {"la": 1.0}},
        {"id": 11, "name": "right", "level": 2, "children": [4, 5, 6], "anchor": {"ra": 1.0}},
        {"id": 20, "name": "whole", "level": 3, "children": [10, 11],
         "anchor": {"la": 0.5, "ra": 0.5}},
    ],
    "scale": {"reference_length": 20.0, "level_factors": [1.0, 1.0, 1.0]},
}

POSES = [
    [(2, 2), (6, 3), (9, 7), (14, 2), (17, 6), (13, 9)],
    [(2, 3), (5, 7), (3, 11), (15, 3), (18, 7), (16, 11)],
    [(3, 2), (7, 2), (11, 3), (13, 4), (16, 8), (12, 12)],
    [(2, 5), (6, 8), (10, 5), (14, 6), (18, 9), (14, 12)],
]


def main():
    hierarchy = load_hierarchy(HIERARCHY)
    rng = np.random.default_rng(0)
    annotations = [
        Annotation(f"img{i}", np.array(p, float), size=(24, 24))
        for i, p in enumerate(POSES)
    ]
    model = RelationTypeModel.build(hierarchy, annotations, atomic_bins=8, composite_bins=2)
    library = build_library(annotations, hierarchy, model)

    # one shared synthetic scene stands in for the per-image score maps
    scene = make_scene(library, hierarchy, seed=0, grid=(48, 48))
    scene_truth = Annotation("scene", scene.configuration, size=(48, 48))

    positives = [scene_truth] + augment_positives([scene_truth], rng, 0.02, copies=6)
    negatives = generate_negatives([scene_truth], (48, 48), rng, per_positive=7)
    print(f"training samples: {len(positives)} positive, {len(negatives)} negative")

    training = build_training_set(positives, negatives, scene.stack, hierarchy, library)
    print(f"feature dimension: {training.features.shape[1]} "
          f"(= {hierarchy.atomic_count} atoms + 2 x {len(hierarchy.composite_nodes)} nodes + bias)")

    w, objective = train_weights(training, c=5.0, epochs=300, seed=0)
    margins = training.labels * (training.features @ w)
    print(f"objective {objective:.2f}, training accuracy {np.mean(margins > 0):.0%}")
    weights = WeightVector.from_array(w, hierarchy)
    print(f"min non-bias weight: {min(w[:-1]):.3f} (>= 0 by construction)")
    print("\nlearned weights:")
    print(weights.to_json(hierarchy))


if __name__ == "__main__":
    main()

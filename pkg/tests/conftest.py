import copy
from pathlib import Path

import numpy as np
import pytest

from hierpose import (
    Annotation,
    PartHierarchy,
    RelationTypeModel,
    ScoreMapStack,
    build_library,
    load_hierarchy,
)
from hierpose.appearance import CompositeMaps, ScaleMaps

CONFIG_DIR = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture(scope="session")
def human_hierarchy() -> PartHierarchy:
    return load_hierarchy(CONFIG_DIR / "human_hierarchy.json")


@pytest.fixture(scope="session")
def bird_hierarchy() -> PartHierarchy:
    return load_hierarchy(CONFIG_DIR / "bird_hierarchy.json")


def tiny2_doc() -> dict:
    """Depth-2 hierarchy: one composite root over 3 atoms."""
    return {
        "levels": 2,
        "nodes": [
            {"id": 1, "name": "a", "level": 1, "children": [], "anchor": None},
            {"id": 2, "name": "b", "level": 1, "children": [], "anchor": None},
            {"id": 3, "name": "c", "level": 1, "children": [], "anchor": None},
            {"id": 10, "name": "root", "level": 2, "children": [1, 2, 3],
             "anchor": {"a": 1.0}},
        ],
        "scale": {"reference_length": 10.0, "level_factors": [1.0, 1.0]},
    }


def tiny3_doc() -> dict:
    """3-level hierarchy: two 3-atom limbs under one root."""
    return {
        "levels": 3,
        "nodes": [
            {"id": 1, "name": "la", "level": 1, "children": [], "anchor": None},
            {"id": 2, "name": "lb", "level": 1, "children": [], "anchor": None},
            {"id": 3, "name": "lc", "level": 1, "children": [], "anchor": None},
            {"id": 4, "name": "ra", "level": 1, "children": [], "anchor": None},
            {"id": 5, "name": "rb", "level": 1, "children": [], "anchor": None},
            {"id": 6, "name": "rc", "level": 1, "children": [], "anchor": None},
            {"id": 10, "name": "left", "level": 2, "children": [1, 2, 3],
             "anchor": {"la": 1.0}},
            {"id": 11, "name": "right", "level": 2, "children": [4, 5, 6],
             "anchor": {"ra": 1.0}},
            {"id": 20, "name": "whole", "level": 3, "children": [10, 11],
             "anchor": {"la": 0.5, "ra": 0.5}},
        ],
        "scale": {"reference_length": 20.0, "level_factors": [1.0, 1.0, 1.0]},
    }


def limbs4_doc() -> dict:
    """4-level hierarchy: limbs and trunk groups under one whole-object root."""
    return {
        "levels": 4,
        "nodes": [
            {"id": 1, "name": "la", "level": 1, "children": [], "anchor": None},
            {"id": 2, "name": "lb", "level": 1, "children": [], "anchor": None},
            {"id": 3, "name": "lc", "level": 1, "children": [], "anchor": None},
            {"id": 4, "name": "ra", "level": 1, "children": [], "anchor": None},
            {"id": 5, "name": "rb", "level": 1, "children": [], "anchor": None},
            {"id": 6, "name": "rc", "level": 1, "children": [], "anchor": None},
            {"id": 7, "name": "ca", "level": 1, "children": [], "anchor": None},
            {"id": 8, "name": "cb", "level": 1, "children": [], "anchor": None},
            {"id": 9, "name": "ha", "level": 1, "children": [], "anchor": None},
            {"id": 10, "name": "hb", "level": 1, "children": [], "anchor": None},
            {"id": 11, "name": "left", "level": 2, "children": [1, 2, 3],
             "anchor": {"la": 1.0}},
            {"id": 12, "name": "right", "level": 2, "children": [4, 5, 6],
             "anchor": {"ra": 1.0}},
            {"id": 13, "name": "core", "level": 2, "children": [7, 8],
             "anchor": {"ca": 1.0}},
            {"id": 14, "name": "head", "level": 2, "children": [9, 10],
             "anchor": {"ha": 1.0}},
            {"id": 20, "name": "limbs", "level": 3, "children": [11, 12],
             "anchor": {"la": 0.5, "ra": 0.5}},
            {"id": 21, "name": "trunk", "level": 3, "children": [13, 14],
             "anchor": {"ca": 0.5, "ha": 0.5}},
            {"id": 30, "name": "body", "level": 4, "children": [20, 21],
             "anchor": {"la": 0.25, "ra": 0.25, "ca": 0.25, "ha": 0.25}},
        ],
        "scale": {"reference_length": 25.0, "level_factors": [1.0, 1.0, 1.0, 1.0]},
    }


@pytest.fixture()
def tiny2() -> PartHierarchy:
    return load_hierarchy(tiny2_doc())


@pytest.fixture()
def tiny3() -> PartHierarchy:
    return load_hierarchy(tiny3_doc())


def base_pose_tiny3(variant: int = 0) -> np.ndarray:
    """Hand-made poses for the tiny3 hierarchy, distinct per variant."""
    poses = [
        [(2, 2), (6, 3), (9, 7), (14, 2), (17, 6), (13, 9)],
        [(2, 3), (5, 7), (3, 11), (15, 3), (18, 7), (16, 11)],
        [(3, 2), (7, 2), (11, 3), (13, 4), (16, 8), (12, 12)],
        [(2, 5), (6, 8), (10, 5), (14, 6), (18, 9), (14, 12)],
        [(1, 2), (4, 6), (8, 9), (13, 2), (15, 7), (11, 10)],
    ]
    return np.array(poses[variant % len(poses)], dtype=float)


def annotations_tiny3(count: int = 3) -> list[Annotation]:
    return [Annotation(f"img{i}", base_pose_tiny3(i)) for i in range(count)]


def library_for(hierarchy, annotations, atomic_bins=8, composite_bins=2, seed=0):
    model = RelationTypeModel.build(
        hierarchy, annotations, atomic_bins=atomic_bins,
        composite_bins=composite_bins, seed=seed,
    )
    return build_library(annotations, hierarchy, model), model


def random_stack(
    hierarchy,
    atomic_bins: dict[int, int],
    composite_bins: dict[int, int],
    rng: np.random.Generator,
    grid=(12, 12),
    scales=(1.0,),
) -> ScoreMapStack:
    """Random but properly normalized stack for property tests."""
    height, width = grid
    table = [(0, 0)]
    for part in hierarchy.atomic_ids:
        for m in range(1, atomic_bins[part] + 1):
            table.append((part, m))
    maps = []
    for scale in scales:
        atomic = rng.random((len(table), height, width))
        atomic /= atomic.sum(axis=0)
        composite = {}
        for part, bins in composite_bins.items():
            data = rng.random((bins, height, width))
            data /= data.sum(axis=0)
            composite[part] = CompositeMaps(part, hierarchy.node(part).level, data)
        maps.append(
            ScaleMaps(float(scale), np.array(table, dtype=np.uint32), atomic, composite)
        )
    return ScoreMapStack(maps)


def deep_copy_annotations(annotations):
    return [copy.deepcopy(a) for a in annotations]

"""Synthetic scenes with known ground truth, plus brute-force oracles.

Scenes are desk-scale surrogates for real images: a pose is sampled from an
exemplar library (optionally mixing exemplars across parts), placed into a
pixel grid, and rendered as a score-map stack with Gaussian bumps on the
correct (part, relation-type) channels.  The oracles re-derive pose
similarity by lattice search and the best configuration by exhaustive
enumeration; they share no code with the closed-form/search paths they are
used to check.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize

from .appearance import CompositeMaps, ScaleMaps, ScoreMapStack, save_score_maps, load_score_maps
from .geometry import ChildGeometry, SimilarityTransform, _max_angle, fit_least_squares
from .hierarchy import PartHierarchy
from .learning import Annotation, ExemplarLibrary, load_annotations, save_annotations
from .scoring import WeightVector, total_score

__all__ = [
    "generate_pose",
    "render_score_maps",
    "SynthScene",
    "make_scene",
    "save_scene",
    "load_scene",
    "grid_search_pose_similarity",
    "exhaustive_best_config",
]


def generate_pose(
    library: ExemplarLibrary,
    hierarchy: PartHierarchy,
    rng: np.random.Generator,
    mix: bool = False,
    assignment: dict[int, int] | None = None,
) -> tuple[np.ndarray, dict[int, int]]:
    """Sample a configuration top-down from the exemplar library.

    The root exemplar fixes the layout of its children; each composite child
    picks its own exemplar (from the same source annotation unless `mix`)
    and is similarity-aligned onto the anchor/box the parent assigned to it,
    recursing down to the atomic leaves.  `assignment` pins exemplar choices
    per node.  Returns the configuration and the per-node choices made.
    """
    chosen: dict[int, int] = {}

    def pick(node_id: int, source: str | None) -> int:
        if assignment is not None and node_id in assignment:
            index = assignment[node_id]
        elif mix or source is None:
            count = library.size(node_id)
            if count == 0:
                raise ValueError(f"empty exemplar library for node {node_id}")
            index = int(rng.integers(count))
        else:
            index = library.for_source(node_id, source).index
        chosen[node_id] = index
        return index

    X = np.full((hierarchy.atomic_count, 2), np.nan)

    def anchor_box_points(locations: np.ndarray, node_id: int) -> np.ndarray:
        box = hierarchy.tight_box(locations, node_id)
        return np.stack(
            [hierarchy.anchor_point(locations, node_id), box.top_left, box.bottom_right]
        )

    def place(node_id: int, transform: SimilarityTransform, exemplar) -> None:
        node = hierarchy.node(node_id)
        placed = np.full_like(exemplar.locations, np.nan)
        rows = hierarchy.atom_rows(node_id)
        placed[rows] = transform.apply(exemplar.locations[rows])
        for child_id in node.children:
            child = hierarchy.node(child_id)
            if child.is_atomic:
                X[hierarchy.atom_index(child_id)] = placed[hierarchy.atom_index(child_id)]
            else:
                target = anchor_box_points(placed, child_id)
                child_ex = library.get(child_id, pick(child_id, exemplar.source))
                source_pts = anchor_box_points(child_ex.locations, child_id)
                fit, _ = fit_least_squares(source_pts, target, bound=np.pi)
                place(child_id, fit, child_ex)

    root_ex = library.get(hierarchy.root.id, pick(hierarchy.root.id, None))
    place(hierarchy.root.id, SimilarityTransform.identity(), root_ex)
    if not np.isfinite(X).all():
        raise RuntimeError("pose generation left unplaced atomic parts")
    return X, chosen


def render_score_maps(
    X: np.ndarray,
    hierarchy: PartHierarchy,
    atomic_labels: dict[int, int],
    composite_labels: dict[int, int],
    atomic_bins: dict[int, int],
    composite_bins: dict[int, int],
    grid: tuple[int, int] = (64, 64),
    sigma: float = 1.5,
    amplitude: float = 0.8,
    distractors: int = 0,
    noise: float = 0.0,
    rng: np.random.Generator | None = None,
    scales: tuple[float, ...] = (1.0,),
) -> ScoreMapStack:
    """Gaussian-bump score maps with the correct channels lit at X.

    Atomic channels get a bump of `amplitude` at each part location on its
    labeled type channel; composite tensors mix a uniform type distribution
    toward the labeled type near each part's anchor.  Optional distractor
    bumps and uniform channel noise are rng-driven; per-pixel channel sums
    are exactly renormalized.
    """
    if distractors or noise:
        if rng is None:
            raise ValueError("distractors/noise need an rng")
    height, width = int(grid[0]), int(grid[1])
    if not 0 < amplitude <= 0.9:
        raise ValueError("amplitude must lie in (0, 0.9]")
    yy, xx = np.mgrid[0:height, 0:width].astype(float)

    def bump(center, spread=sigma) -> np.ndarray:
        d2 = (xx - center[0]) ** 2 + (yy - center[1]) ** 2
        return np.exp(-d2 / (2.0 * spread * spread))

    table = [(0, 0)]
    channel_of: dict[tuple[int, int], int] = {}
    for part in hierarchy.atomic_ids:
        for m in range(1, atomic_bins[part] + 1):
            channel_of[(part, m)] = len(table)
            table.append((part, m))

    foreground = np.zeros((len(table) - 1, height, width))
    for row, part in enumerate(hierarchy.atomic_ids):
        label = atomic_labels[part]
        foreground[channel_of[(part, label)] - 1] += amplitude * bump(X[row])
    for _ in range(distractors):
        part = int(rng.choice(hierarchy.atomic_ids))
        label = int(rng.integers(1, atomic_bins[part] + 1))
        center = rng.random(2) * (width - 1, height - 1)
        strength = amplitude * (0.3 + 0.6 * rng.random())
        foreground[channel_of[(part, label)] - 1] += strength * bump(center)
    if noise:
        foreground += noise * rng.random(foreground.shape)

    cap = 0.98
    total = foreground.sum(axis=0)
    over = total > cap
    if np.any(over):
        foreground[:, over] *= cap / total[over]
    foreground32 = foreground.astype(np.float32)
    background = (1.0 - foreground32.astype(np.float64).sum(axis=0)).astype(np.float32)
    atomic = np.concatenate([background[None], foreground32], axis=0)

    composite: dict[int, CompositeMaps] = {}
    for part, bins in composite_bins.items():
        label = composite_labels[part]
        anchor = hierarchy.anchor_point(X, part)
        mixture = amplitude * bump(anchor, spread=2.0 * sigma)
        data = np.empty((bins, height, width), dtype=np.float32)
        uniform = (1.0 - mixture) / bins
        for m in range(1, bins + 1):
            value = uniform + (mixture if m == label else 0.0)
            if m < bins:
                data[m - 1] = value.astype(np.float32)
        head = data[: bins - 1].astype(np.float64).sum(axis=0)
        data[bins - 1] = (1.0 - head).astype(np.float32)
        composite[part] = CompositeMaps(part, hierarchy.node(part).level, data)

    maps = []
    for scale in scales:
        maps.append(
            ScaleMaps(
                scale=float(scale),
                channel_table=np.array(table, dtype=np.uint32),
                atomic=atomic.copy(),
                composite={p: CompositeMaps(c.part_id, c.level, c.data.copy())
                           for p, c in composite.items()},
            )
        )
    return ScoreMapStack(maps)


@dataclass
class SynthScene:
    """Ground-truth configuration, rendered stack, and how it was made."""

    configuration: np.ndarray
    stack: ScoreMapStack
    provenance: dict


def make_scene(
    library: ExemplarLibrary,
    hierarchy: PartHierarchy,
    seed: int,
    grid: tuple[int, int] = (64, 64),
    mix: bool = False,
    assignment: dict[int, int] | None = None,
    sigma: float = 1.5,
    amplitude: float = 0.8,
    noise: float = 0.0,
    distractors: int = 0,
    margin: float = 0.12,
    max_rotation: float = 0.15,
    snap: bool = True,
    scales: tuple[float, ...] = (1.0,),
) -> SynthScene:
    """Sample a pose, place it inside the grid, and render its score maps."""
    rng = np.random.default_rng(seed)
    pose, chosen = generate_pose(library, hierarchy, rng, mix=mix, assignment=assignment)

    angle = float(rng.uniform(-max_rotation, max_rotation)) if max_rotation else 0.0
    rotated = SimilarityTransform(1.0, angle, np.zeros(2)).apply(pose)
    extent = rotated.max(axis=0) - rotated.min(axis=0)
    height, width = grid
    pad = margin * min(width - 1, height - 1)
    room = np.array([width - 1, height - 1]) - 2 * pad
    scale = float(np.min(room / np.maximum(extent, 1e-9)))
    scaled = rotated * scale
    span = np.array([width - 1, height - 1]) - 2 * pad - (scaled.max(axis=0) - scaled.min(axis=0))
    origin = pad + rng.random(2) * np.maximum(span, 0.0)
    X = scaled - scaled.min(axis=0) + origin
    if snap:
        X = np.floor(X + 0.5)

    atomic_labels: dict[int, int] = {}
    for node in hierarchy.nodes_at_level(2):
        exemplar = library.get(node.id, chosen[node.id])
        for child_id in node.children:
            atomic_labels[child_id] = exemplar.child_labels[child_id]
    composite_labels: dict[int, int] = {}
    for level in range(3, hierarchy.levels + 1):
        for node in hierarchy.nodes_at_level(level):
            exemplar = library.get(node.id, chosen[node.id])
            for child_id in node.children:
                composite_labels[child_id] = exemplar.child_labels[child_id]

    stack = render_score_maps(
        X,
        hierarchy,
        atomic_labels,
        composite_labels,
        library.atomic_bins,
        library.composite_bins,
        grid=grid,
        sigma=sigma,
        amplitude=amplitude,
        distractors=distractors,
        noise=noise,
        rng=rng,
        scales=scales,
    )
    provenance = {
        "seed": seed,
        "mix": mix,
        "grid": [height, width],
        "sigma": sigma,
        "amplitude": amplitude,
        "noise": noise,
        "distractors": distractors,
        "margin": margin,
        "max_rotation": max_rotation,
        "snap": snap,
        "scales": list(scales),
        "assignment": {str(node): index for node, index in sorted(chosen.items())},
        "sources": {
            str(node): library.get(node, index).source
            for node, index in sorted(chosen.items())
        },
    }
    return SynthScene(configuration=X, stack=stack, provenance=provenance)


def save_scene(scene: SynthScene, directory, hierarchy: PartHierarchy) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    grid = scene.provenance.get("grid")
    size = (grid[1], grid[0]) if grid else None
    save_annotations(
        [Annotation("scene", scene.configuration, size)], hierarchy,
        directory / "annotation.json",
    )
    save_score_maps(scene.stack, directory / "maps.hpsm")
    (directory / "provenance.json").write_text(
        json.dumps(scene.provenance, indent=2, sort_keys=True) + "\n"
    )


def load_scene(directory, hierarchy: PartHierarchy) -> SynthScene:
    directory = Path(directory)
    annotation = load_annotations(directory / "annotation.json", hierarchy)[0]
    stack = load_score_maps(directory / "maps.hpsm")
    provenance = json.loads((directory / "provenance.json").read_text())
    return SynthScene(annotation.points, stack, provenance)


# -- oracles ------------------------------------------------------------------


def _geometry_points(geometry) -> np.ndarray:
    if isinstance(geometry, ChildGeometry):
        return geometry.points
    return np.asarray(geometry, dtype=float)


def grid_search_pose_similarity(
    current,
    exemplar,
    bound=None,
    scale_range: tuple[float, float] = (0.5, 2.0),
    scale_step: float = 0.02,
    angle_step: float = 0.01,
    translation_step: float = 0.25,
    translation_span: float = 1.0,
    refine: bool = True,
) -> float:
    """Lattice-search reference for the pose similarity score.

    Sweeps scale x angle x translation (translations on a lattice around the
    centroid offset of each scale/angle cell) and polishes the best cell with
    a bounded local minimizer.  Used to cross-check the closed-form fit.
    """
    cur = _geometry_points(current)
    ex = _geometry_points(exemplar)
    max_angle = _max_angle(bound)
    k = cur.shape[0]

    scales = np.arange(scale_range[0], scale_range[1] + scale_step / 2, scale_step)
    angles = np.arange(-max_angle, max_angle, angle_step)
    angles = np.append(angles, max_angle)
    steps = np.arange(-translation_span, translation_span + translation_step / 2, translation_step)
    ox, oy = np.meshgrid(steps, steps)
    offsets = np.stack([ox.ravel(), oy.ravel()], axis=1)

    cos, sin = np.cos(angles), np.sin(angles)
    rot = np.stack([np.stack([cos, -sin], -1), np.stack([sin, cos], -1)], -2)  # (A,2,2)
    placed = scales[:, None, None, None] * np.einsum("aij,kj->aki", rot, ex)[None]  # (S,A,k,2)
    center = cur.mean(axis=0) - placed.mean(axis=2)  # (S,A,2): centroid-offset translation
    diff = cur[None, None] - placed - center[:, :, None, :]  # (S,A,k,2)
    base = np.einsum("sakc,sakc->sa", diff, diff)
    linear = diff.sum(axis=2)  # (S,A,2)
    resid = (
        base[:, :, None]
        - 2.0 * np.einsum("sac,oc->sao", linear, offsets)
        + k * np.einsum("oc,oc->o", offsets, offsets)[None, None]
    )
    flat = int(np.argmin(resid))
    si, ai, oi = np.unravel_index(flat, resid.shape)
    best = float(resid[si, ai, oi])
    start = np.array(
        [
            scales[si],
            angles[ai],
            center[si, ai, 0] + offsets[oi, 0],
            center[si, ai, 1] + offsets[oi, 1],
        ]
    )

    if refine:

        def objective(params):
            s, theta, tx, ty = params
            c, sn = np.cos(theta), np.sin(theta)
            moved = s * ex @ np.array([[c, sn], [-sn, c]]) + (tx, ty)
            return float(np.sum((cur - moved) ** 2))

        result = optimize.minimize(
            objective,
            start,
            method="L-BFGS-B",
            bounds=[(1e-9, None), (-max_angle, max_angle), (None, None), (None, None)],
        )
        best = min(best, float(result.fun))
    return -best


def exhaustive_best_config(
    stack: ScoreMapStack,
    hierarchy: PartHierarchy,
    library: ExemplarLibrary,
    weights: WeightVector,
    candidates,
    bound=None,
    budget: int = 10**7,
) -> tuple[np.ndarray, float]:
    """Exact argmax of the total score over per-part candidate locations.

    Ties resolve to the lexicographically smallest configuration.  Raises
    when the Cartesian product exceeds the budget.
    """
    lists = []
    total = 1
    for cand in candidates:
        cand = np.asarray(cand, dtype=float).reshape(-1, 2)
        order = np.lexsort((cand[:, 1], cand[:, 0]))
        lists.append(cand[order])
        total *= len(cand)
    if len(lists) != hierarchy.atomic_count:
        raise ValueError("need one candidate list per atomic part")
    if total > budget:
        raise ValueError(f"candidate budget exceeded: {total} > {budget}")
    best_score = -np.inf
    best = None
    X = np.empty((hierarchy.atomic_count, 2))
    for combo in itertools.product(*lists):
        X[:] = combo
        score = total_score(X, stack, hierarchy, library, weights, bound)
        if score > best_score:
            best_score = score
            best = X.copy()
    return best, float(best_score)

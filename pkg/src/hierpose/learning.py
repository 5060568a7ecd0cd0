"""Exemplar library construction and max-margin weight training.

Exemplars are extracted per composite part from annotated configurations:
each one stores the child geometry of its node, the full subtree atomic
locations, the object size of its source pose, and the relation-type label
of every child.  Weight training is a binary hinge-loss problem solved by
projected stochastic subgradient descent with non-negativity constraints on
everything except the trailing bias component.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .appearance import RelationTypeModel
from .geometry import ChildGeometry, child_geometry
from .hierarchy import BoundingBox, PartHierarchy, as_configuration, object_size

LIBRARY_MAGIC = b"HPEL"
LIBRARY_VERSION = 1

__all__ = [
    "Annotation",
    "load_annotations",
    "save_annotations",
    "Exemplar",
    "ExemplarLibrary",
    "build_library",
    "save_library",
    "load_library",
    "augment_positives",
    "generate_negatives",
    "TrainingSet",
    "train_weights",
]


@dataclass
class Annotation:
    """One annotated pose: image id, (N, 2) atomic locations, optional extras."""

    image: str
    points: np.ndarray
    size: tuple[int, int] | None = None  # image extent (width, height)
    visible: np.ndarray | None = None

    def __post_init__(self):
        self.points = as_configuration(self.points)
        if self.visible is not None:
            self.visible = np.asarray(self.visible, dtype=bool)
            if self.visible.shape != (self.points.shape[0],):
                raise ValueError("visibility flags must match part count")

    def copy(self) -> "Annotation":
        return Annotation(
            self.image,
            self.points.copy(),
            self.size,
            None if self.visible is None else self.visible.copy(),
        )


def load_annotations(path, hierarchy: PartHierarchy) -> list[Annotation]:
    """Read annotation records {"image", "size", "parts": {name: [x, y]}}."""
    records = json.loads(Path(path).read_text())
    if isinstance(records, dict):
        records = [records]
    out = []
    for rec in records:
        parts = rec["parts"]
        points = np.zeros((hierarchy.atomic_count, 2))
        for name, xy in parts.items():
            points[hierarchy.atom_index(hierarchy.id_of(name))] = xy
        missing = set(hierarchy.atomic_names) - set(parts)
        if missing:
            raise ValueError(f"annotation {rec.get('image')!r} missing parts {sorted(missing)}")
        size = tuple(rec["size"]) if rec.get("size") else None
        visible = None
        if rec.get("visible"):
            visible = np.array(
                [bool(rec["visible"].get(name, True)) for name in hierarchy.atomic_names]
            )
        out.append(Annotation(str(rec["image"]), points, size, visible))
    return out


def save_annotations(annotations, hierarchy: PartHierarchy, path) -> None:
    records = []
    for ann in annotations:
        rec = {
            "image": ann.image,
            "size": list(ann.size) if ann.size else None,
            "parts": {
                name: [float(v) for v in ann.points[i]]
                for i, name in enumerate(hierarchy.atomic_names)
            },
        }
        if ann.visible is not None:
            rec["visible"] = {
                name: bool(ann.visible[i]) for i, name in enumerate(hierarchy.atomic_names)
            }
        records.append(rec)
    Path(path).write_text(json.dumps(records, indent=2, sort_keys=True) + "\n")


@dataclass
class Exemplar:
    """Stored pose of one composite part, extracted from a source annotation."""

    node_id: int
    index: int
    source: str
    object_size: float
    locations: np.ndarray  # (N, 2); NaN outside the node's subtree
    child_labels: dict[int, int]
    geometry: ChildGeometry


class ExemplarLibrary:
    """Per-composite-node exemplar lists plus relation-type channel counts."""

    def __init__(
        self,
        nodes: dict[int, list[Exemplar]],
        atomic_bins: dict[int, int],
        composite_bins: dict[int, int],
    ):
        self.nodes = {nid: list(exs) for nid, exs in nodes.items()}
        self.atomic_bins = dict(atomic_bins)
        self.composite_bins = dict(composite_bins)
        self._by_source: dict[int, dict[str, int]] = {
            nid: {ex.source: ex.index for ex in exs} for nid, exs in self.nodes.items()
        }

    def exemplars(self, node_id: int) -> list[Exemplar]:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise KeyError(f"library has no exemplars for node {node_id}") from None

    def get(self, node_id: int, index: int) -> Exemplar:
        return self.exemplars(node_id)[index]

    def for_source(self, node_id: int, source: str) -> Exemplar:
        try:
            return self.nodes[node_id][self._by_source[node_id][source]]
        except KeyError:
            raise KeyError(f"node {node_id} has no exemplar from source {source!r}") from None

    def size(self, node_id: int) -> int:
        return len(self.exemplars(node_id))


def _extract_exemplar(
    ann: Annotation,
    node_id: int,
    index: int,
    hierarchy: PartHierarchy,
    type_model: RelationTypeModel,
) -> Exemplar:
    X = ann.points
    node = hierarchy.node(node_id)
    labels: dict[int, int] = {}
    for child_id in node.children:
        child = hierarchy.node(child_id)
        if child.is_atomic:
            labels[child_id] = type_model.atomic_label(X, child_id, hierarchy)
        else:
            labels[child_id] = type_model.composite_label(X, child_id, hierarchy)
    locations = np.full_like(X, np.nan)
    rows = hierarchy.atom_rows(node_id)
    locations[rows] = X[rows]
    return Exemplar(
        node_id=node_id,
        index=index,
        source=ann.image,
        object_size=object_size(X),
        locations=locations,
        child_labels=labels,
        geometry=child_geometry(X, node_id, hierarchy),
    )


def build_library(
    annotations,
    hierarchy: PartHierarchy,
    type_model: RelationTypeModel,
) -> ExemplarLibrary:
    """Extract one exemplar per (annotation, composite node).

    Every composite part is treated as a standalone object whose exemplars
    only model the spatial layout of its children.
    """
    nodes: dict[int, list[Exemplar]] = {n.id: [] for n in hierarchy.composite_nodes}
    for ann in annotations:
        if object_size(ann.points) <= 0:
            raise ValueError(f"degenerate annotation {ann.image!r}: all points identical")
        for node in hierarchy.composite_nodes:
            nodes[node.id].append(
                _extract_exemplar(ann, node.id, len(nodes[node.id]), hierarchy, type_model)
            )
    return ExemplarLibrary(
        nodes,
        atomic_bins=type_model.atomic_bins_map(hierarchy),
        composite_bins=type_model.composite_bins_map(),
    )


# -- binary container --------------------------------------------------------


def save_library(library: ExemplarLibrary, path) -> None:
    """Write the little-endian "HPEL" container (bit-exact round trip)."""
    out = bytearray()
    out += LIBRARY_MAGIC
    out += struct.pack("<I", LIBRARY_VERSION)

    def pack_bins(bins: dict[int, int]) -> None:
        out.extend(struct.pack("<I", len(bins)))
        for key in sorted(bins):
            out.extend(struct.pack("<II", key, bins[key]))

    pack_bins(library.atomic_bins)
    pack_bins(library.composite_bins)
    out += struct.pack("<I", len(library.nodes))
    for node_id in sorted(library.nodes):
        exemplars = library.nodes[node_id]
        out += struct.pack("<II", node_id, len(exemplars))
        for ex in exemplars:
            raw = ex.source.encode("utf-8")
            out += struct.pack("<I", len(raw)) + raw
            out += struct.pack("<d", ex.object_size)
            rows = np.nonzero(np.isfinite(ex.locations[:, 0]))[0]
            out += struct.pack("<I", len(rows))
            out += rows.astype("<u4").tobytes()
            out += ex.locations[rows].astype("<f8").tobytes()
            out += struct.pack("<I", len(ex.child_labels))
            for child_id in sorted(ex.child_labels):
                out += struct.pack("<II", child_id, ex.child_labels[child_id])
    Path(path).write_bytes(bytes(out))


def load_library(path, hierarchy: PartHierarchy) -> ExemplarLibrary:
    data = Path(path).read_bytes()
    pos = 0

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise ValueError("truncated library file")
        values = struct.unpack(fmt, data[pos : pos + size])
        pos += size
        return values

    if data[:4] != LIBRARY_MAGIC:
        raise ValueError(f"bad magic in {path}: not an exemplar library")
    pos = 4
    (version,) = take("<I")
    if version != LIBRARY_VERSION:
        raise ValueError(f"unsupported library version {version}")

    def read_bins() -> dict[int, int]:
        (n,) = take("<I")
        return dict(take("<II") for _ in range(n))

    atomic_bins = read_bins()
    composite_bins = read_bins()
    (n_nodes,) = take("<I")
    nodes: dict[int, list[Exemplar]] = {}
    n_parts = hierarchy.atomic_count
    for _ in range(n_nodes):
        node_id, n_ex = take("<II")
        exemplars = []
        for index in range(n_ex):
            (source_len,) = take("<I")
            source = data[pos : pos + source_len].decode("utf-8")
            pos += source_len
            (size_value,) = take("<d")
            (n_atoms,) = take("<I")
            rows = np.frombuffer(data, "<u4", n_atoms, pos).astype(int)
            pos += 4 * n_atoms
            coords = np.frombuffer(data, "<f8", 2 * n_atoms, pos).reshape(n_atoms, 2)
            pos += 16 * n_atoms
            locations = np.full((n_parts, 2), np.nan)
            locations[rows] = coords
            (n_labels,) = take("<I")
            labels = dict(take("<II") for _ in range(n_labels))
            exemplars.append(
                Exemplar(
                    node_id=node_id,
                    index=index,
                    source=source,
                    object_size=size_value,
                    locations=locations,
                    child_labels=labels,
                    geometry=child_geometry(locations, node_id, hierarchy),
                )
            )
        nodes[node_id] = exemplars
    if pos != len(data):
        raise ValueError("trailing bytes after library payload")
    return ExemplarLibrary(nodes, atomic_bins, composite_bins)


# -- training data ------------------------------------------------------------


def augment_positives(
    annotations, rng: np.random.Generator, jitter_fraction: float, copies: int = 1
) -> list[Annotation]:
    """Jittered copies of the positives; displacement norm stays within
    jitter_fraction times the object size."""
    if jitter_fraction < 0:
        raise ValueError("jitter_fraction must be >= 0")
    out = []
    for _ in range(copies):
        for ann in annotations:
            limit = jitter_fraction * object_size(ann.points)
            n = ann.points.shape[0]
            radius = limit * np.sqrt(rng.random(n))
            theta = rng.random(n) * 2.0 * np.pi
            offsets = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
            jittered = ann.copy()
            jittered.points = ann.points + offsets
            out.append(jittered)
    return out


def _root_box(points: np.ndarray) -> BoundingBox:
    return BoundingBox(points.min(axis=0), points.max(axis=0))


def generate_negatives(
    annotations,
    image_extents,
    rng: np.random.Generator,
    noise_sigma: float | None = None,
    per_positive: int = 1,
    max_iou: float = 0.3,
    attempts: int = 100,
) -> list[Annotation]:
    """Positives re-placed at incorrect regions with Gaussian location noise.

    `image_extents` is a (width, height) pair or a {image: (w, h)} mapping;
    a placement is accepted when the displaced root box stays inside the
    image and overlaps the true root box with IoU < max_iou.  Images too
    small for a disjoint placement are skipped with a warning.
    """
    out = []
    for ann in annotations:
        if isinstance(image_extents, dict):
            extent = image_extents[ann.image]
        else:
            extent = image_extents or ann.size
        if extent is None:
            raise ValueError(f"no image extent known for {ann.image!r}")
        width, height = float(extent[0]), float(extent[1])
        sigma = noise_sigma if noise_sigma is not None else 0.02 * object_size(ann.points)
        true_box = _root_box(ann.points)
        span = np.array([width - true_box.width, height - true_box.height])
        if np.any(span <= 0):
            warnings.warn(f"image {ann.image!r} too small to place a negative; skipped")
            continue
        for k in range(per_positive):
            placed = None
            for _ in range(attempts):
                origin = rng.random(2) * span
                shift = origin - true_box.top_left
                points = ann.points + shift + rng.normal(0.0, sigma, ann.points.shape)
                box = _root_box(points)
                if box.iou(true_box) >= max_iou:
                    continue
                inside = (
                    box.top_left[0] >= -0.5
                    and box.top_left[1] >= -0.5
                    and box.bottom_right[0] <= width + 0.5
                    and box.bottom_right[1] <= height + 0.5
                )
                if not inside:
                    continue
                placed = points
                break
            if placed is None:
                warnings.warn(
                    f"image {ann.image!r} too small to place a negative; skipped"
                )
                continue
            negative = ann.copy()
            negative.points = placed
            negative.image = f"{ann.image}#neg{k}"
            out.append(negative)
    return out


@dataclass
class TrainingSet:
    """Feature rows with +/-1 labels; the last feature column is constant 1."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ValueError("features must be (M, D) with M labels")
        if not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise ValueError("labels must be +1 or -1")


def hinge_objective(w: np.ndarray, training: TrainingSet, c: float) -> float:
    margins = training.labels * (training.features @ w)
    return 0.5 * float(w @ w) + c * float(np.maximum(0.0, 1.0 - margins).sum())


def train_weights(
    training: TrainingSet,
    c: float = 1.0,
    epochs: int = 200,
    seed: int = 0,
) -> tuple[np.ndarray, float]:
    """Projected stochastic subgradient descent on the hinge objective.

    Minimizes 0.5 ||w||^2 + c * sum hinge(y <w, f>) with a 1/t step schedule;
    after every step all components except the trailing bias are clamped to
    be non-negative.  Deterministic given the seed.
    """
    if len(np.unique(training.labels)) < 2:
        raise ValueError("training set must contain both classes")
    rng = np.random.default_rng(seed)
    n, dim = training.features.shape
    w = np.zeros(dim)
    t = 0
    for _ in range(epochs):
        order = rng.permutation(n)
        for i in order:
            t += 1
            step = 1.0 / t
            feature = training.features[i]
            label = training.labels[i]
            violated = label * (feature @ w) < 1.0
            w *= 1.0 - step
            if violated:
                w += step * c * n * label * feature
            np.maximum(w[:-1], 0.0, out=w[:-1])
    return w, hinge_objective(w, training, c)

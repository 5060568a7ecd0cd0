"""Score-map stacks: gridded part/relation-type probabilities and lookups.

A stack stores, per scale, an atomic tensor of p(part, relation_type | pixel)
channels (channel (0, 0) is background) and, for composite parts that have a
reference sibling, conditional type tensors p(type | part, pixel).  Stacks
stand in for whatever produced the detection scores; the library only reads
them.  Lookups use nearest-pixel indexing at the nearest stored scale and
clamp probabilities at a 1e-6 floor before taking logs.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hierarchy import PartHierarchy, atomic_relation, composite_relation, object_size

PROB_FLOOR = 1e-6
LOG_FLOOR = math.log(PROB_FLOOR)

MAGIC = b"HPSM"
FORMAT_VERSION = 1

__all__ = [
    "PROB_FLOOR",
    "LOG_FLOOR",
    "ScoreMapError",
    "CompositeMaps",
    "ScaleMaps",
    "ScoreMapStack",
    "load_score_maps",
    "save_score_maps",
    "log_part_prob",
    "log_pose_prob_atomic",
    "log_pose_prob_composite",
    "top_peaks",
    "orientation_bin",
    "fit_relation_clusters",
    "assign_relation_type",
    "AtomicRelation",
    "CompositeRelation",
    "RelationTypeModel",
]


class ScoreMapError(ValueError):
    """Malformed or inconsistent score-map data."""


@dataclass
class CompositeMaps:
    """Conditional relation-type maps p(type | part, pixel) for one part."""

    part_id: int
    level: int
    data: np.ndarray  # (T, H, W) float32

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ScoreMapError("composite maps must be (T, H, W)")


@dataclass
class ScaleMaps:
    """All maps stored for a single scale."""

    scale: float
    channel_table: np.ndarray  # (C, 2) uint32 rows of (part_id, type_id)
    atomic: np.ndarray  # (C, H, W) float32
    composite: dict[int, CompositeMaps] = field(default_factory=dict)

    def __post_init__(self):
        self.channel_table = np.ascontiguousarray(self.channel_table, dtype=np.uint32)
        self.atomic = np.ascontiguousarray(self.atomic, dtype=np.float32)
        if self.atomic.ndim != 3:
            raise ScoreMapError("atomic tensor must be (C, H, W)")
        if self.channel_table.shape != (self.atomic.shape[0], 2):
            raise ScoreMapError("channel table does not match atomic tensor")
        if self.scale <= 0:
            raise ScoreMapError("scale must be positive")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.atomic.shape[1], self.atomic.shape[2]


class ScoreMapStack:
    """Immutable multi-scale stack with cached per-part marginals."""

    def __init__(self, scales: list[ScaleMaps]):
        if not scales:
            raise ScoreMapError("stack needs at least one scale")
        self.scales: tuple[ScaleMaps, ...] = tuple(scales)
        values = [s.scale for s in self.scales]
        if len(set(values)) != len(values):
            raise ScoreMapError("duplicate scale values in stack")
        self._scale_values = np.array(values)
        self._channel_rows: list[dict[tuple[int, int], int]] = []
        self._part_rows: list[dict[int, np.ndarray]] = []
        for maps in self.scales:
            rows: dict[tuple[int, int], int] = {}
            per_part: dict[int, list[int]] = {}
            for row, (part, type_id) in enumerate(maps.channel_table.tolist()):
                key = (int(part), int(type_id))
                if key in rows:
                    raise ScoreMapError(f"duplicate channel {key}")
                rows[key] = row
                if part != 0:
                    per_part.setdefault(int(part), []).append(row)
            self._channel_rows.append(rows)
            self._part_rows.append({p: np.array(r) for p, r in per_part.items()})
        self._marginals: dict[tuple[int, int], np.ndarray] = {}
        self._log_marginals: dict[tuple[int, int], np.ndarray] = {}

    @property
    def n_scales(self) -> int:
        return len(self.scales)

    @property
    def atomic_part_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self._part_rows[0]))

    def nearest_scale_index(self, scale: float) -> int:
        return int(np.argmin(np.abs(self._scale_values - scale)))

    def channel(self, part: int, type_id: int, scale_index: int = 0) -> np.ndarray:
        row = self._channel_rows[scale_index].get((part, type_id))
        if row is None:
            raise KeyError(f"no channel for part {part}, type {type_id}")
        return self.scales[scale_index].atomic[row]

    def type_count(self, part: int, scale_index: int = 0) -> int:
        rows = self._part_rows[scale_index].get(part)
        if rows is None:
            raise KeyError(f"no channels for part {part}")
        return len(rows)

    def marginal(self, part: int, scale_index: int = 0) -> np.ndarray:
        """p(part | pixel): type channels summed, as float64."""
        key = (part, scale_index)
        cached = self._marginals.get(key)
        if cached is None:
            rows = self._part_rows[scale_index].get(part)
            if rows is None:
                raise KeyError(f"no channels for part {part}")
            cached = self.scales[scale_index].atomic[rows].astype(np.float64).sum(axis=0)
            self._marginals[key] = cached
        return cached

    def log_marginal(self, part: int, scale_index: int = 0) -> np.ndarray:
        key = (part, scale_index)
        cached = self._log_marginals.get(key)
        if cached is None:
            cached = np.log(np.maximum(self.marginal(part, scale_index), PROB_FLOOR))
            self._log_marginals[key] = cached
        return cached

    def composite_maps(self, part: int, scale_index: int = 0) -> CompositeMaps:
        maps = self.scales[scale_index].composite.get(part)
        if maps is None:
            raise KeyError(f"no composite maps for part {part}")
        return maps

    def validate(self, tol: float = 1e-3) -> None:
        """Check value range and per-pixel normalization of every tensor."""
        for i, maps in enumerate(self.scales):
            if maps.atomic.min() < -tol or maps.atomic.max() > 1.0 + tol:
                raise ScoreMapError(f"scale {maps.scale}: atomic values outside [0, 1]")
            sums = maps.atomic.astype(np.float64).sum(axis=0)
            err = np.abs(sums - 1.0)
            worst = np.unravel_index(int(err.argmax()), err.shape)
            if err[worst] > tol:
                raise ScoreMapError(
                    f"scale {maps.scale}: atomic channels sum to {sums[worst]:.6f} "
                    f"at pixel (row={worst[0]}, col={worst[1]})"
                )
            for part, comp in maps.composite.items():
                if comp.data.min() < -tol or comp.data.max() > 1.0 + tol:
                    raise ScoreMapError(f"composite part {part}: values outside [0, 1]")
                sums = comp.data.astype(np.float64).sum(axis=0)
                err = np.abs(sums - 1.0)
                worst = np.unravel_index(int(err.argmax()), err.shape)
                if err[worst] > tol:
                    raise ScoreMapError(
                        f"composite part {part} at scale {maps.scale}: channels sum to "
                        f"{sums[worst]:.6f} at pixel (row={worst[0]}, col={worst[1]})"
                    )


# -- binary container ------------------------------------------------------


def save_score_maps(stack: ScoreMapStack, path) -> None:
    """Write the little-endian "HPSM" container (bit-exact round trip)."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", FORMAT_VERSION, stack.n_scales)
    for maps in stack.scales:
        c, h, w = maps.atomic.shape
        out += struct.pack("<dIII", maps.scale, h, w, c)
        out += maps.channel_table.astype("<u4").tobytes()
        out += maps.atomic.astype("<f4").tobytes()
        out += struct.pack("<I", len(maps.composite))
        for part in sorted(maps.composite):
            comp = maps.composite[part]
            out += struct.pack("<III", comp.part_id, comp.level, comp.data.shape[0])
            out += comp.data.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(out))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ScoreMapError("truncated score-map file")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int, shape: tuple[int, ...]) -> np.ndarray:
        raw = self.take(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def load_score_maps(path, tol: float = 1e-3) -> ScoreMapStack:
    """Read an "HPSM" container and validate normalization invariants."""
    reader = _Reader(Path(path).read_bytes())
    if reader.take(4) != MAGIC:
        raise ScoreMapError(f"bad magic in {path}: not a score-map file")
    version, n_scales = reader.unpack("<II")
    if version != FORMAT_VERSION:
        raise ScoreMapError(f"unsupported score-map version {version}")
    scales: list[ScaleMaps] = []
    for _ in range(n_scales):
        scale, h, w, c = reader.unpack("<dIII")
        table = reader.array("<u4", c * 2, (c, 2))
        atomic = reader.array("<f4", c * h * w, (c, h, w))
        (n_comp,) = reader.unpack("<I")
        composite: dict[int, CompositeMaps] = {}
        for _ in range(n_comp):
            part, level, n_types = reader.unpack("<III")
            data = reader.array("<f4", n_types * h * w, (n_types, h, w))
            composite[part] = CompositeMaps(part, level, data)
        scales.append(ScaleMaps(scale, table, atomic, composite))
    if reader.pos != len(reader.data):
        raise ScoreMapError("trailing bytes after score-map payload")
    stack = ScoreMapStack(scales)
    stack.validate(tol)
    return stack


# -- probability lookups ----------------------------------------------------


def _pixel(point, shape: tuple[int, int]) -> tuple[int, int] | None:
    """Nearest-pixel (row, col) for an (x, y) point, or None when off-grid."""
    x, y = float(point[0]), float(point[1])
    col = math.floor(x + 0.5)
    row = math.floor(y + 0.5)
    if 0 <= row < shape[0] and 0 <= col < shape[1]:
        return row, col
    return None


def log_part_prob(stack: ScoreMapStack, part: int, point, scale: float) -> float:
    """log p(part | pixel), marginalized over relation types; floored."""
    idx = stack.nearest_scale_index(scale)
    pix = _pixel(point, stack.scales[idx].grid_shape)
    if pix is None:
        return LOG_FLOOR
    return float(stack.log_marginal(part, idx)[pix])


def log_pose_prob_atomic(stack: ScoreMapStack, parts, labels, points, scale: float) -> float:
    """Sum of log conditional type probabilities at atomic child locations."""
    idx = stack.nearest_scale_index(scale)
    shape = stack.scales[idx].grid_shape
    total = 0.0
    for part, label, point in zip(parts, labels, points, strict=True):
        pix = _pixel(point, shape)
        if pix is None:
            total += LOG_FLOOR
            continue
        joint = float(stack.channel(part, int(label), idx)[pix])
        denom = float(stack.marginal(part, idx)[pix])
        cond = joint / denom if denom > 0.0 else 0.0
        total += math.log(max(cond, PROB_FLOOR))
    return total


def log_pose_prob_composite(stack: ScoreMapStack, parts, labels, anchors, scale: float) -> float:
    """Sum of log relation-type probabilities at composite child anchors."""
    idx = stack.nearest_scale_index(scale)
    shape = stack.scales[idx].grid_shape
    total = 0.0
    for part, label, anchor in zip(parts, labels, anchors, strict=True):
        maps = stack.composite_maps(part, idx)
        pix = _pixel(anchor, shape)
        if pix is None:
            total += LOG_FLOOR
            continue
        total += math.log(max(float(maps.data[int(label) - 1][pix]), PROB_FLOOR))
    return total


def top_peaks(
    stack: ScoreMapStack, part: int, scale: float, count: int, nms_radius: float
) -> tuple[np.ndarray, np.ndarray]:
    """Strict 8-neighborhood maxima of p(part | pixel), greedily NMS-pruned.

    Returns up to `count` (x, y) points ranked by descending score with
    pairwise distance >= nms_radius; row-major order breaks ties.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    idx = stack.nearest_scale_index(scale)
    grid = stack.marginal(part, idx)
    padded = np.full((grid.shape[0] + 2, grid.shape[1] + 2), -np.inf)
    padded[1:-1, 1:-1] = grid
    center = padded[1:-1, 1:-1]
    strict = np.ones_like(grid, dtype=bool)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            neighbor = padded[1 + dr : padded.shape[0] - 1 + dr, 1 + dc : padded.shape[1] - 1 + dc]
            strict &= center > neighbor
    rows, cols = np.nonzero(strict)
    if rows.size == 0:
        return np.empty((0, 2)), np.empty(0)
    scores = grid[rows, cols]
    order = np.lexsort((cols, rows, -scores))
    picked_pts: list[np.ndarray] = []
    picked_scores: list[float] = []
    for k in order:
        candidate = np.array([cols[k], rows[k]], dtype=float)
        if any(np.hypot(*(candidate - p)) < nms_radius for p in picked_pts):
            continue
        picked_pts.append(candidate)
        picked_scores.append(float(scores[k]))
        if len(picked_pts) == count:
            break
    return np.array(picked_pts), np.array(picked_scores)


# -- relation types ----------------------------------------------------------


def orientation_bin(offset, bins: int) -> int:
    """Uniform orientation bin of a nonzero offset; angle 0 maps to type 1."""
    if bins < 1:
        raise ValueError("bins must be >= 1")
    dx, dy = float(offset[0]), float(offset[1])
    if dx == 0.0 and dy == 0.0:
        raise ValueError("zero offset has no orientation")
    angle = math.atan2(dy, dx) % (2.0 * math.pi)
    width = 2.0 * math.pi / bins
    return 1 + int(angle // width) % bins


def fit_relation_clusters(
    vectors, count: int, seed: int = 0, max_iter: int = 100
) -> np.ndarray:
    """Deterministic k-means (k-means++ init, fixed iteration cap).

    Vectors are clustered as given; relation vectors are expected to be
    normalized by object size before fitting.
    """
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim != 2:
        raise ValueError("vectors must be a 2-D array")
    if count < 1:
        raise ValueError("count must be >= 1")
    if vectors.shape[0] < count:
        raise ValueError(f"need at least {count} vectors, got {vectors.shape[0]}")
    rng = np.random.default_rng(seed)

    centroids = np.empty((count, vectors.shape[1]))
    centroids[0] = vectors[rng.integers(vectors.shape[0])]
    dist2 = np.sum((vectors - centroids[0]) ** 2, axis=1)
    for k in range(1, count):
        total = dist2.sum()
        if total <= 0.0:
            centroids[k] = vectors[0]
            continue
        r = rng.random() * total
        pick = int(np.searchsorted(np.cumsum(dist2), r))
        pick = min(pick, vectors.shape[0] - 1)
        centroids[k] = vectors[pick]
        dist2 = np.minimum(dist2, np.sum((vectors - centroids[k]) ** 2, axis=1))

    assignment = np.full(vectors.shape[0], -1)
    for _ in range(max_iter):
        d2 = np.sum((vectors[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assignment = np.argmin(d2, axis=1)
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for k in range(count):
            members = vectors[assignment == k]
            if members.size:
                centroids[k] = members.mean(axis=0)
    return centroids


def assign_relation_type(vector, centroids: np.ndarray) -> int:
    """1-based index of the nearest centroid; ties go to the lowest index."""
    vector = np.asarray(vector, dtype=float)
    d2 = np.sum((np.asarray(centroids, dtype=float) - vector) ** 2, axis=1)
    return int(np.argmin(d2)) + 1


@dataclass(frozen=True)
class AtomicRelation:
    """Orientation binning of an atomic part against its reference sibling."""

    neighbor: int
    bins: int

    def __post_init__(self):
        if self.bins < 2:
            raise ValueError("atomic relation needs at least 2 bins")


@dataclass(frozen=True)
class CompositeRelation:
    """Clustered 4-vector relation of a composite part to its reference sibling."""

    reference: int
    centroids: np.ndarray

    def __post_init__(self):
        centroids = np.asarray(self.centroids, dtype=float)
        if centroids.ndim != 2 or centroids.shape[0] < 2:
            raise ValueError("composite relation needs at least 2 centroids")
        if not np.isfinite(centroids).all():
            raise ValueError("centroids must be finite")
        object.__setattr__(self, "centroids", centroids)

    @property
    def bins(self) -> int:
        return self.centroids.shape[0]


@dataclass
class RelationTypeModel:
    """Relation-type assignment rules for atomic and composite parts.

    By default the reference of each part is its next sibling in canonical
    child order (wrapping), which keeps every non-root part typed without any
    extra configuration.
    """

    atomic: dict[int, AtomicRelation]
    composite: dict[int, CompositeRelation]

    @staticmethod
    def sibling_ring(hierarchy: PartHierarchy) -> dict[int, int]:
        """Default reference map: each child points at the next sibling."""
        refs: dict[int, int] = {}
        for node in hierarchy.composite_nodes:
            kids = node.children
            for i, child in enumerate(kids):
                refs[child] = kids[(i + 1) % len(kids)]
        return refs

    @classmethod
    def build(
        cls,
        hierarchy: PartHierarchy,
        annotations,
        atomic_bins: int = 12,
        composite_bins: int = 24,
        references: dict[int, int] | None = None,
        seed: int = 0,
    ) -> "RelationTypeModel":
        """Fit the model from annotated configurations.

        `annotations` is any iterable of objects with a `.points` (N, 2)
        array (plain arrays are accepted too).
        """
        refs = dict(references) if references else cls.sibling_ring(hierarchy)
        atomic = {
            part: AtomicRelation(refs[part], atomic_bins) for part in hierarchy.atomic_ids
        }
        configs = [np.asarray(getattr(a, "points", a), dtype=float) for a in annotations]
        composite: dict[int, CompositeRelation] = {}
        for node in hierarchy.composite_nodes:
            if node.id == hierarchy.root.id:
                continue
            vectors = []
            for X in configs:
                size = object_size(X)
                if size <= 0:
                    raise ValueError("degenerate annotation: zero-extent configuration")
                rel = composite_relation(
                    hierarchy.anchor_point(X, node.id),
                    hierarchy.tight_box(X, refs[node.id]),
                )
                vectors.append(rel / size)
            centroids = fit_relation_clusters(np.array(vectors), composite_bins, seed=seed)
            composite[node.id] = CompositeRelation(refs[node.id], centroids)
        return cls(atomic=atomic, composite=composite)

    def atomic_label(self, X: np.ndarray, part: int, hierarchy: PartHierarchy) -> int:
        spec = self.atomic[part]
        offset = atomic_relation(
            X[hierarchy.atom_index(part)], X[hierarchy.atom_index(spec.neighbor)]
        )
        return orientation_bin(offset, spec.bins)

    def composite_label(self, X: np.ndarray, part: int, hierarchy: PartHierarchy) -> int:
        spec = self.composite[part]
        rel = composite_relation(
            hierarchy.anchor_point(X, part), hierarchy.tight_box(X, spec.reference)
        )
        return assign_relation_type(rel / object_size(X), spec.centroids)

    def atomic_bins_map(self, hierarchy: PartHierarchy) -> dict[int, int]:
        return {part: spec.bins for part, spec in self.atomic.items()}

    def composite_bins_map(self) -> dict[int, int]:
        return {part: spec.bins for part, spec in self.composite.items()}

"""2-D similarity transforms and exemplar pose similarity.

Two fitting routines cover the needs of hypothesize-and-test inference: an
exact two-point fit (used to align exemplars to hypothesis pairs) and a
least-squares fit over k >= 2 correspondences with a rotation-angle bound
(used to score how well a pose matches a stored exemplar).  Reflections are
never produced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .hierarchy import PartHierarchy

DEFAULT_MAX_ANGLE = math.pi / 3
SCALE_FLOOR = 1e-9

__all__ = [
    "DEFAULT_MAX_ANGLE",
    "AngleBound",
    "SimilarityTransform",
    "ChildGeometry",
    "child_geometry",
    "fit_two_points",
    "fit_least_squares",
    "pose_similarity",
]


def _wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    wrapped = math.remainder(angle, 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class AngleBound:
    """Symmetric rotation constraint |angle| <= max_abs_angle."""

    max_abs_angle: float = DEFAULT_MAX_ANGLE

    def __post_init__(self):
        if not 0.0 < self.max_abs_angle <= math.pi:
            raise ValueError("max_abs_angle must lie in (0, pi]")


def _max_angle(bound: "AngleBound | float | None") -> float:
    if bound is None:
        return DEFAULT_MAX_ANGLE
    if isinstance(bound, AngleBound):
        return bound.max_abs_angle
    return AngleBound(float(bound)).max_abs_angle


@dataclass(frozen=True)
class SimilarityTransform:
    """p -> scale * R(angle) @ p + translation."""

    scale: float
    angle: float
    translation: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "angle", _wrap_angle(float(self.angle)))
        object.__setattr__(
            self, "translation", np.asarray(self.translation, dtype=float).reshape(2)
        )

    @classmethod
    def identity(cls) -> "SimilarityTransform":
        return cls(1.0, 0.0, np.zeros(2))

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.array([[c, -s], [s, c]])

    def apply(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return self.scale * pts @ self.rotation().T + self.translation


def fit_two_points(src, dst) -> SimilarityTransform:
    """Unique similarity mapping two distinct points exactly onto two others.

    Closed form via the complex ratio of the segment vectors.
    """
    src = np.asarray(src, dtype=float).reshape(2, 2)
    dst = np.asarray(dst, dtype=float).reshape(2, 2)
    sz = complex(*(src[1] - src[0]))
    dz = complex(*(dst[1] - dst[0]))
    if sz == 0 or dz == 0:
        raise ValueError("degenerate pair: coincident points")
    ratio = dz / sz
    scale = abs(ratio)
    angle = math.atan2(ratio.imag, ratio.real)
    transform = SimilarityTransform(scale, angle, np.zeros(2))
    translation = dst[0] - transform.apply(src[0])[0]
    return SimilarityTransform(scale, angle, translation)


def fit_least_squares(
    src, dst, bound: AngleBound | float | None = None
) -> tuple[SimilarityTransform, float]:
    """Least-squares similarity (no reflection) with a bounded rotation angle.

    Returns the transform and the sum of squared distances it leaves.  If the
    unconstrained optimal angle falls outside [-bound, +bound], the angle is
    clamped to the better endpoint and scale/translation are re-solved
    optimally at that fixed angle.  The fitted scale is floored at 1e-9.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2 or src.shape[0] < 2:
        raise ValueError("src and dst must be matching (k, 2) arrays with k >= 2")
    max_angle = _max_angle(bound)

    src_mean = src.mean(axis=0)
    dst_mean = dst.mean(axis=0)
    sc = src - src_mean
    dc = dst - dst_mean
    spread = float(np.sum(sc * sc))
    if spread <= 0.0:
        raise ValueError("all source points are identical")

    # a, b are the cos/sin components of the cross-covariance
    a = float(np.sum(sc * dc))
    b = float(np.sum(sc[:, 0] * dc[:, 1] - sc[:, 1] * dc[:, 0]))

    if a == 0.0 and b == 0.0:
        angle = 0.0
    else:
        angle = math.atan2(b, a)
        if abs(angle) > max_angle:
            gain_pos = a * math.cos(max_angle) + b * math.sin(max_angle)
            gain_neg = a * math.cos(max_angle) - b * math.sin(max_angle)
            if gain_pos > gain_neg:
                angle = max_angle
            elif gain_neg > gain_pos:
                angle = -max_angle
            else:
                angle = math.copysign(max_angle, angle)

    gain = a * math.cos(angle) + b * math.sin(angle)
    scale = max(gain / spread, SCALE_FLOOR)
    transform = SimilarityTransform(scale, angle, np.zeros(2))
    translation = dst_mean - transform.apply(src_mean)[0]
    transform = SimilarityTransform(scale, angle, translation)
    residual = float(np.sum((dst - transform.apply(src)) ** 2))
    return transform, residual


@dataclass(frozen=True)
class ChildGeometry:
    """Stacked child points of one composite part, in canonical child order.

    Atomic children contribute their location; composite children contribute
    their anchor point followed by their tight-box corners (tl, br).  The
    signature records the child kinds so that only like-for-like geometries
    are compared.
    """

    points: np.ndarray
    signature: tuple[str, ...]

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        expected = sum(1 if kind == "atom" else 3 for kind in self.signature)
        if pts.shape != (expected, 2):
            raise ValueError(
                f"geometry has {pts.shape} points, signature {self.signature} needs ({expected}, 2)"
            )
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "signature", tuple(self.signature))


def child_geometry(X: np.ndarray, node_id: int, hierarchy: PartHierarchy) -> ChildGeometry:
    """Extract a composite node's child geometry from a configuration.

    ``X`` may carry NaN rows for atoms outside the node's subtree; only the
    subtree rows are read.
    """
    node = hierarchy.node(node_id)
    if node.is_atomic:
        raise ValueError(f"node {node_id} is atomic and has no child geometry")
    X = np.asarray(X, dtype=float)
    points: list[np.ndarray] = []
    signature: list[str] = []
    for child_id in node.children:
        child = hierarchy.node(child_id)
        if child.is_atomic:
            points.append(X[hierarchy.atom_index(child_id)])
            signature.append("atom")
        else:
            box = hierarchy.tight_box(X, child_id)
            points.append(hierarchy.anchor_point(X, child_id))
            points.append(box.top_left)
            points.append(box.bottom_right)
            signature.append("comp")
    pts = np.stack(points)
    if not np.isfinite(pts).all():
        raise ValueError(f"child geometry of node {node_id} uses undefined locations")
    return ChildGeometry(pts, tuple(signature))


def pose_similarity(
    current: ChildGeometry,
    exemplar: ChildGeometry,
    bound: AngleBound | float | None = None,
) -> float:
    """Negative squared alignment residual of the exemplar onto the pose.

    Zero iff the current geometry is a bound-respecting similarity image of
    the exemplar; always <= 0.
    """
    if current.signature != exemplar.signature:
        raise ValueError(
            f"child geometry signature mismatch: {current.signature} vs {exemplar.signature}"
        )
    _, residual = fit_least_squares(exemplar.points, current.points, bound)
    return -residual

import math

import numpy as np
import pytest

from hierpose import (
    AngleBound,
    ChildGeometry,
    SimilarityTransform,
    child_geometry,
    fit_least_squares,
    fit_two_points,
    pose_similarity,
)
from hierpose.synth import grid_search_pose_similarity


def random_geometry(rng, k=4, span=8.0):
    return rng.random((k, 2)) * span


def test_fit_two_points_axis_rotation():
    t = fit_two_points([(0, 0), (1, 0)], [(0, 0), (0, 2)])
    assert t.scale == pytest.approx(2.0)
    assert t.angle == pytest.approx(math.pi / 2)
    assert np.allclose(t.translation, (0, 0))


def test_fit_two_points_identity():
    t = fit_two_points([(1, 2), (3, 4)], [(1, 2), (3, 4)])
    assert t.scale == pytest.approx(1.0)
    assert t.angle == pytest.approx(0.0)
    assert np.allclose(t.translation, (0, 0), atol=1e-12)


def test_fit_two_points_scale_shift():
    t = fit_two_points([(0, 0), (2, 0)], [(5, 5), (9, 5)])
    assert t.scale == pytest.approx(2.0)
    assert t.angle == pytest.approx(0.0)
    assert np.allclose(t.translation, (5, 5))


def test_fit_two_points_degenerate():
    with pytest.raises(ValueError, match="degenerate pair"):
        fit_two_points([(1, 1), (1, 1)], [(0, 0), (1, 0)])
    with pytest.raises(ValueError, match="degenerate pair"):
        fit_two_points([(0, 0), (1, 0)], [(2, 2), (2, 2)])


def test_fit_two_points_roundtrip():
    rng = np.random.default_rng(0)
    for _ in range(50):
        src = random_geometry(rng, 2)
        dst = random_geometry(rng, 2)
        if np.allclose(src[0], src[1]) or np.allclose(dst[0], dst[1]):
            continue
        t = fit_two_points(src, dst)
        assert np.allclose(t.apply(src), dst, atol=1e-9)


def test_apply_examples():
    identity = SimilarityTransform.identity()
    pts = np.array([[1.0, 2.0], [3.0, -4.0]])
    assert np.allclose(identity.apply(pts), pts)
    t = SimilarityTransform(2.0, 0.0, (1.0, 1.0))
    assert np.allclose(t.apply([(0, 0)]), [(1, 1)])
    rot = SimilarityTransform(1.0, math.pi / 2, (0.0, 0.0))
    assert np.allclose(rot.apply([(1, 0)]), [(0, 1)], atol=1e-12)


def test_fit_least_squares_identity():
    pts = np.array([[0.0, 0.0], [4.0, 1.0], [2.0, 5.0]])
    t, residual = fit_least_squares(pts, pts)
    assert residual == pytest.approx(0.0, abs=1e-12)
    assert t.scale == pytest.approx(1.0)
    assert t.angle == pytest.approx(0.0)


def test_fit_least_squares_clamps_angle():
    rng = np.random.default_rng(1)
    src = random_geometry(rng, 4)
    flip = SimilarityTransform(1.0, math.pi, (0.0, 0.0))
    dst = flip.apply(src)
    t, residual = fit_least_squares(src, dst, bound=math.pi / 2)
    assert abs(t.angle) == pytest.approx(math.pi / 2)
    assert residual > 0
    unbounded, zero_residual = fit_least_squares(src, dst, bound=AngleBound(math.pi))
    assert zero_residual == pytest.approx(0.0, abs=1e-9)
    assert abs(unbounded.angle) == pytest.approx(math.pi)


def test_fit_least_squares_all_identical_src():
    src = np.ones((3, 2))
    dst = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError, match="identical"):
        fit_least_squares(src, dst)


def test_fit_least_squares_matches_lattice_oracle():
    rng = np.random.default_rng(2)
    bound = math.pi / 3
    for _ in range(10):
        src = random_geometry(rng, 4)
        dst = random_geometry(rng, 4)
        _, residual = fit_least_squares(src, dst, bound)
        oracle = -grid_search_pose_similarity(dst, src, bound)
        assert residual <= oracle + 1e-6


def test_fit_least_squares_never_beats_unconstrained():
    rng = np.random.default_rng(3)
    for _ in range(30):
        src = random_geometry(rng, 5)
        dst = random_geometry(rng, 5)
        _, unconstrained = fit_least_squares(src, dst, bound=math.pi)
        t, constrained = fit_least_squares(src, dst, bound=0.3)
        assert constrained >= unconstrained - 1e-9
        if abs(t.angle) < 0.3 - 1e-12:
            assert constrained == pytest.approx(unconstrained, abs=1e-9)


def test_pose_similarity_identity():
    rng = np.random.default_rng(4)
    for _ in range(10):
        pts = random_geometry(rng, 4)
        geometry = ChildGeometry(pts, ("atom",) * 4)
        assert pose_similarity(geometry, geometry) >= -1e-9


def test_pose_similarity_invariant_to_similarity():
    rng = np.random.default_rng(5)
    pts = random_geometry(rng, 4)
    exemplar = ChildGeometry(pts, ("atom",) * 4)
    moved = SimilarityTransform(3.0, 0.1, (7.0, -2.0)).apply(pts)
    current = ChildGeometry(moved, ("atom",) * 4)
    assert pose_similarity(current, exemplar) >= -1e-9


def test_pose_similarity_displaced_matches_oracle():
    rng = np.random.default_rng(6)
    for _ in range(5):
        pts = random_geometry(rng, 4)
        displaced = pts.copy()
        displaced[0] += (1.3, -0.8)
        value = pose_similarity(
            ChildGeometry(displaced, ("atom",) * 4), ChildGeometry(pts, ("atom",) * 4)
        )
        oracle = grid_search_pose_similarity(displaced, pts, None)
        assert value == pytest.approx(oracle, abs=1e-6)
        assert value < 0


def test_pose_similarity_signature_mismatch():
    a = ChildGeometry(np.zeros((2, 2)), ("atom", "atom"))
    b = ChildGeometry(np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]]), ("comp",))
    with pytest.raises(ValueError, match="signature"):
        pose_similarity(a, b)


def test_pose_similarity_transform_invariance_of_current():
    # unit-scale, bound-respecting moves of `current` leave the score alone
    # as long as the shifted optimal angle stays inside the bound
    rng = np.random.default_rng(7)
    for _ in range(10):
        exemplar_pts = random_geometry(rng, 5)
        current_pts = exemplar_pts + rng.normal(0.0, 0.4, exemplar_pts.shape)
        exemplar = ChildGeometry(exemplar_pts, ("atom",) * 5)
        base = pose_similarity(ChildGeometry(current_pts, ("atom",) * 5), exemplar)
        moved = SimilarityTransform(1.0, 0.2, (3.0, 4.0)).apply(current_pts)
        value = pose_similarity(ChildGeometry(moved, ("atom",) * 5), exemplar)
        assert value == pytest.approx(base, abs=1e-6)


def test_child_geometry_signature(tiny3):
    X = np.arange(12, dtype=float).reshape(6, 2)
    level2 = child_geometry(X, 10, tiny3)
    assert level2.signature == ("atom", "atom", "atom")
    assert level2.points.shape == (3, 2)
    root = child_geometry(X, 20, tiny3)
    assert root.signature == ("comp", "comp")
    assert root.points.shape == (6, 2)

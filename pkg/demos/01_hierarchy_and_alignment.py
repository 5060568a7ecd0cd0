"""Walk through the part hierarchy and the similarity-alignment toolkit.

Loads the reference human hierarchy, computes boxes/anchors/relations for a
stick-figure pose, then shows the two transform fits and the exemplar pose
similarity score.
"""

import math
from pathlib import Path

import numpy as np

from hierpose import (
    ChildGeometry,
    SimilarityTransform,
    child_geometry,
    composite_relation,
    fit_least_squares,
    fit_two_points,
    load_hierarchy,
    object_size,
    pose_similarity,
)

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

POSE = np.array(
    [
        (30, 95), (32, 75), (35, 55), (45, 55), (47, 75), (49, 95),
        (15, 50), (22, 40), (32, 30), (48, 30), (56, 40), (62, 50),
        (40, 25), (40, 10),
    ],
    dtype=float,
)


def main():
    human = load_hierarchy(CONFIGS / "human_hierarchy.json")
    print(f"human hierarchy: {human.levels} levels, {human.atomic_count} atomic parts")
    for level in range(2, human.levels + 1):
        names = [n.name for n in human.nodes_at_level(level)]
        print(f"  level {level}: {names}")

    print(f"\npose object size (mean box side): {object_size(POSE):.1f} px")
    for name in ("r_arm", "legs", "body"):
        node = human.node(human.id_of(name))
        box = human.tight_box(POSE, node.id)
        anchor = human.anchor_point(POSE, node.id)
        print(
            f"  {name:9s} box [{box.top_left[0]:.0f},{box.top_left[1]:.0f}]..."
            f"[{box.bottom_right[0]:.0f},{box.bottom_right[1]:.0f}]  anchor {anchor}"
        )

    arm_anchor = human.anchor_point(POSE, human.id_of("r_arm"))
    head_box = human.tight_box(POSE, human.id_of("head"))
    relation = composite_relation(arm_anchor, head_box)
    print(f"\nrelation r_arm -> head box (tl-a, br-a): {relation}")

    print("\n-- exact two-point fit --")
    transform = fit_two_points([(0, 0), (1, 0)], [(10, 10), (10, 14)])
    print(f"scale {transform.scale:.2f}  angle {math.degrees(transform.angle):.0f} deg"
          f"  translation {transform.translation}")

    print("\n-- bounded least-squares fit --")
    src = np.array([(0.0, 0.0), (4.0, 0.0), (2.0, 3.0)])
    dst = SimilarityTransform(1.5, 0.25, (7.0, 2.0)).apply(src)
    fit, residual = fit_least_squares(src, dst, bound=math.pi / 3)
    print(f"recovered scale {fit.scale:.3f} angle {fit.angle:.3f}, residual {residual:.2e}")
    dst_far = SimilarityTransform(1.0, 2.5, (0.0, 0.0)).apply(src)
    fit, residual = fit_least_squares(src, dst_far, bound=math.pi / 3)
    print(f"rotation past the bound clamps to {fit.angle:.3f} rad, residual {residual:.2f}")

    print("\n-- pose similarity (zero iff a bound-respecting similarity image) --")
    arm = child_geometry(POSE, human.id_of("r_arm"), human)
    moved = ChildGeometry(
        SimilarityTransform(2.0, 0.2, (5.0, -3.0)).apply(arm.points), arm.signature
    )
    bent = ChildGeometry(arm.points + [(0, 0), (6, -4), (0, 0)], arm.signature)
    print(f"  transformed copy: {pose_similarity(moved, arm):+.2e}")
    print(f"  bent elbow:       {pose_similarity(bent, arm):+.2f}")


if __name__ == "__main__":
    main()

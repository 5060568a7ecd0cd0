"""Hierarchical exemplar-based articulated pose estimation on score maps."""

from .appearance import (
    RelationTypeModel,
    ScoreMapStack,
    assign_relation_type,
    fit_relation_clusters,
    load_score_maps,
    log_part_prob,
    log_pose_prob_atomic,
    log_pose_prob_composite,
    orientation_bin,
    save_score_maps,
    top_peaks,
)
from .geometry import (
    AngleBound,
    ChildGeometry,
    SimilarityTransform,
    child_geometry,
    fit_least_squares,
    fit_two_points,
    pose_similarity,
)
from .hierarchy import (
    AnchorSpec,
    BoundingBox,
    HierarchyError,
    PartHierarchy,
    PartNode,
    ScaleParams,
    as_configuration,
    atomic_relation,
    composite_relation,
    load_hierarchy,
    object_size,
    scale_factor,
)
from .inference import (
    Hypothesis,
    InferenceParams,
    InferenceResult,
    NoConfigurationError,
    collapse_model,
    hypothesis_from_config,
    infer,
    refine_hypothesis,
)
from .learning import (
    Annotation,
    ExemplarLibrary,
    TrainingSet,
    augment_positives,
    build_library,
    generate_negatives,
    load_annotations,
    load_library,
    save_annotations,
    save_library,
    train_weights,
)
from .metrics import MetricReport, Segment, emit_report, pcp_radius, pcp_segments, pdj_curve
from .scoring import (
    WeightVector,
    appearance_score,
    best_fit_pose,
    feature_vector,
    load_weights,
    pose_score,
    refinement_score,
    save_weights,
    spatial_score,
    subtree_score,
    total_score,
)
from .synth import (
    SynthScene,
    exhaustive_best_config,
    generate_pose,
    grid_search_pose_similarity,
    make_scene,
    render_score_maps,
)

__version__ = "0.1.0"

"""viewqa: viewpoint-aware projection pipeline for point cloud quality.

Distortion synthesis, orthographic point splatting, self-supervised
pairwise viewpoint ranking, default-optimized viewpoint datasets, a
content-aware viewpoint generator, and correlation-based evaluation
harnesses, plus an annotation study server.
"""

from .cloud import CloudSummary, PlyParseError, PointCloud, load_ply, save_ply, summarize
from .distort import (
    ALL_KINDS,
    DistortionKind,
    DistortionLadder,
    DistortionSpec,
    apply_distortion,
    apply_sequence,
    build_ladder,
    pseudo_mos,
    severity,
)
from .dov import DOVRecord, build_dov, read_dov_manifest, select_optimized, write_dov_manifest
from .metrics import (
    EvalReport,
    EvalSample,
    baseline_pcqa,
    compare_strategies,
    consistency_index,
    krcc,
    plcc,
    rank_sweep,
    srcc,
    worse_the_better,
)
from .projector import ProjectedImage, load_depth, render, render_face_set, save_depth, save_png
from .ranker import (
    EmptyProjectionError,
    FeatureStore,
    RankPair,
    ScoreModel,
    SsvrnHyper,
    count_pairs,
    extract_features,
    generate_pairs,
    init_score_model,
    load_score_model,
    materialize_pairs,
    pair_loss,
    rank_probability,
    ranking_accuracy,
    save_score_model,
    score,
    train_ssvrn,
)
from .seeds import derive_seed
from .viewgen import (
    CavgnConfig,
    CavgnHyper,
    CavgnModel,
    angle_loss,
    constrain,
    extract_multiscale,
    generate_viewpoint,
    init_cavgn_model,
    load_cavgn_model,
    multiscale_stats,
    save_cavgn_model,
    train_cavgn,
)
from .viewgeom import (
    CandidateGrid,
    ViewSetup,
    default_viewpoints,
    lift,
    plane_coords,
    sample_candidates,
    view_setup_for,
)

__version__ = "0.1.0"

"""Transport-network fitting and probe-agent exploration for 3D-projected
embedding point clouds."""

__version__ = "0.1.0"

from .analysis import (
    ClusterLabeling,
    DirectionStats,
    ThresholdedField,
    assign_clusters,
    cosine_ranking,
    direction_stats,
    euclidean_ranking,
    rank_diff_table,
    threshold_components,
)
from .core import CounterRng, PointCloud, ScalarField, Token, sample_trilinear, splat_trilinear
from .fieldio import read_field, read_scalar_field, write_field
from .ingest import (
    EmbeddingSet,
    load_points_3d,
    load_word2vec_text,
    normalize_to_unit_cube,
    pca_project,
    save_points_3d,
)
from .mcpm import McpmParams, McpmResult, fit_trace
from .probe import ProbeParams, Ranking, TrajectorySet, mcpm_similarity, run_probes

__all__ = [
    "ClusterLabeling",
    "CounterRng",
    "DirectionStats",
    "EmbeddingSet",
    "McpmParams",
    "McpmResult",
    "PointCloud",
    "ProbeParams",
    "Ranking",
    "ScalarField",
    "ThresholdedField",
    "Token",
    "TrajectorySet",
    "assign_clusters",
    "cosine_ranking",
    "direction_stats",
    "euclidean_ranking",
    "fit_trace",
    "load_points_3d",
    "load_word2vec_text",
    "mcpm_similarity",
    "normalize_to_unit_cube",
    "pca_project",
    "rank_diff_table",
    "read_field",
    "read_scalar_field",
    "run_probes",
    "sample_trilinear",
    "save_points_3d",
    "splat_trilinear",
    "threshold_components",
    "write_field",
]

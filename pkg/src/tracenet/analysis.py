"""Rankings, trace-network clustering, and directional statistics.

Everything here is read-only over fitted fields and probe trajectories:
baseline vector-space rankings to compare the walk-based one against, a
difference table between metrics, connected-component clustering of the
thresholded trace, token-to-cluster assignment, and azimuthal histograms of
probe step directions for telling filament-like walks from knot-like ones.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .core import PointCloud, ScalarField
from .ingest import EmbeddingSet
from .probe import Ranking, TrajectorySet

__all__ = [
    "ClusterLabeling",
    "DiffRow",
    "DirectionStats",
    "ThresholdedField",
    "assign_clusters",
    "cosine_ranking",
    "diff_table_to_csv",
    "direction_stats",
    "euclidean_ranking",
    "rank_diff_table",
    "ranking_records",
    "ranking_to_csv",
    "threshold_components",
    "wordcloud_export",
]

AUTO_TAU_MASS_QUANTILE = 0.05


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdedField:
    """Connected components of {voxel : trace >= tau}.

    voxel_labels has grid layout (nz, ny, nx); 0 marks below-threshold
    voxels, components are numbered 1..n_components by descending mass.
    """

    voxel_labels: np.ndarray
    n_components: int
    tau: float
    component_mass: dict[int, float]

    def __post_init__(self):
        distinct = np.unique(self.voxel_labels)
        distinct = distinct[distinct > 0]
        if len(distinct) != self.n_components:
            raise ValueError(
                f"{len(distinct)} distinct labels but n_components={self.n_components}"
            )
        if set(self.component_mass) != set(range(1, self.n_components + 1)):
            raise ValueError("component_mass keys must be 1..n_components")


@dataclass(frozen=True)
class ClusterLabeling:
    """Cluster structure of a fitted trace plus the token assignment.

    token_labels maps every token id to a component id, or None where no
    supra-threshold voxel lies within the assignment radius.
    """

    voxel_labels: np.ndarray
    token_labels: dict[int, Optional[int]]
    n_components: int
    component_mass: dict[int, float]

    def __post_init__(self):
        valid = set(range(1, self.n_components + 1))
        for tid, lab in self.token_labels.items():
            if lab is not None and lab not in valid:
                raise ValueError(f"token {tid} assigned to unknown component {lab}")


@dataclass(frozen=True)
class DirectionStats:
    """Azimuthal step-direction profile of one trajectory set.

    The histogram lives on the plane of the two dominant principal axes of
    the step directions. bimodality scores how much of the peak mass sits in
    one antipodal bin pair: ~1 for a clean two-opposite-lobe walk along a
    filament, ~0.5 for a single drifting lobe. n_modes counts smoothed peaks
    above twice the uniform level.
    """

    histogram: np.ndarray
    bimodality: float
    circular_variance: float
    n_modes: int

    def __post_init__(self):
        h = np.asarray(self.histogram, dtype=np.float64)
        if h.ndim != 1 or len(h) % 2:
            raise ValueError(f"histogram must be 1D with even length, got {h.shape}")
        if abs(float(h.sum()) - 1.0) > 1e-9:
            raise ValueError("histogram must sum to 1")
        if not 0.0 <= self.bimodality <= 1.0 + 1e-12:
            raise ValueError(f"bimodality {self.bimodality} outside [0, 1]")
        if not 0.0 <= self.circular_variance <= 1.0 + 1e-12:
            raise ValueError(f"circular_variance {self.circular_variance} outside [0, 1]")


class DiffRow(NamedTuple):
    surface: str
    rank_a: float
    rank_b: float
    rank_c: float
    delta: float


# ---------------------------------------------------------------------------
# Vector-space baseline rankings
# ---------------------------------------------------------------------------

VectorSet = Union[EmbeddingSet, PointCloud]


def _vectors_of(obj: VectorSet) -> tuple[np.ndarray, list]:
    if isinstance(obj, PointCloud):
        return obj.positions, obj.tokens
    if isinstance(obj, EmbeddingSet):
        return obj.vectors, obj.tokens
    raise TypeError(f"expected EmbeddingSet or PointCloud, got {type(obj).__name__}")


def _query_row(tokens: list, query: int) -> int:
    for row, tok in enumerate(tokens):
        if tok.id == query:
            return row
    raise KeyError(f"unknown query token id {query}")


def euclidean_ranking(vectors: VectorSet, query: int) -> Ranking:
    """Rank every other token by straight-line distance to the query,
    closest first, ties broken by token id."""
    mat, tokens = _vectors_of(vectors)
    row = _query_row(tokens, query)
    dists = np.linalg.norm(mat - mat[row], axis=1)
    ids = np.array([t.id for t in tokens])
    order = np.lexsort((ids, dists))
    entries = [
        (int(ids[i]), float(dists[i])) for i in order if i != row
    ]
    return Ranking(query, "euclidean", entries)


def cosine_ranking(vectors: VectorSet, query: int) -> Ranking:
    """Rank every other token by the cosine of its angle to the query,
    largest first. Zero-norm vectors carry no direction: they score -inf and
    sort last. A zero-norm query is an error."""
    mat, tokens = _vectors_of(vectors)
    row = _query_row(tokens, query)
    norms = np.linalg.norm(mat, axis=1)
    if norms[row] == 0.0:
        raise ValueError(f"query token {query} has a zero vector")
    safe = np.where(norms > 0.0, norms, 1.0)
    unit = mat / safe[:, None]
    scores = unit @ unit[row]
    scores[norms == 0.0] = -np.inf
    ids = np.array([t.id for t in tokens])
    order = np.lexsort((ids, -scores))
    entries = [
        (int(ids[i]), float(scores[i])) for i in order if i != row
    ]
    return Ranking(query, "cosine", entries)


# ---------------------------------------------------------------------------
# Metric comparison table
# ---------------------------------------------------------------------------


def rank_diff_table(
    a: Ranking,
    b: Ranking,
    c: Ranking,
    top_k: int,
    surfaces: Optional[Mapping[int, str]] = None,
) -> list[DiffRow]:
    """Rows for the union of the three top-k prefixes, sorted by descending
    rank_b - rank_a.

    Tokens absent from a ranking get rank inf, so a token that metric b never
    surfaces sorts to the very top. Tokens absent from both a and b carry no
    divergence signal and get delta 0. Ties break by rank_a, then surface.
    """
    if not (a.query == b.query == c.query):
        raise ValueError(
            f"rankings answer different queries: {a.query}, {b.query}, {c.query}"
        )
    if top_k < 1:
        raise ValueError(f"top_k must be positive, got {top_k}")
    union: list[int] = []
    seen = set()
    for ranking in (a, b, c):
        for tid in ranking.ids()[:top_k]:
            if tid not in seen:
                seen.add(tid)
                union.append(tid)

    rank_in = []
    for ranking in (a, b, c):
        rank_in.append({tid: i + 1 for i, tid in enumerate(ranking.ids())})

    rows = []
    for tid in union:
        ra = rank_in[0].get(tid, math.inf)
        rb = rank_in[1].get(tid, math.inf)
        rc = rank_in[2].get(tid, math.inf)
        if math.isinf(ra) and math.isinf(rb):
            delta = 0.0
        else:
            delta = rb - ra
        surface = surfaces.get(tid, str(tid)) if surfaces is not None else str(tid)
        rows.append(DiffRow(surface, ra, rb, rc, delta))
    rows.sort(key=lambda r: (-r.delta, r.rank_a, r.surface))
    return rows


# ---------------------------------------------------------------------------
# Trace-network clustering
# ---------------------------------------------------------------------------

# filaments run diagonally through thin voxel chains; face-only adjacency
# would shatter them, so components use the full 26-neighborhood
_CONNECTIVITY = np.ones((3, 3, 3), dtype=bool)


def _auto_tau(values: np.ndarray, quantile: float) -> float:
    """Smallest value such that voxels at or above it hold at least the given
    fraction of total mass."""
    desc = np.sort(values[values > 0])[::-1].astype(np.float64)
    if desc.size == 0:
        return math.inf
    csum = np.cumsum(desc)
    target = quantile * csum[-1]
    idx = int(np.searchsorted(csum, target, side="left"))
    return float(desc[min(idx, desc.size - 1)])


def threshold_components(trace: ScalarField, tau: Union[float, str] = "auto") -> ThresholdedField:
    """Label the 26-connected components of {voxel : trace >= tau}.

    tau="auto" keeps the brightest voxels holding the top 5% of total mass,
    which tracks filament cores across resolutions. Components come out
    numbered by descending contained mass.
    """
    if isinstance(tau, str):
        if tau != "auto":
            raise ValueError(f"tau must be a number or 'auto', got {tau!r}")
        resolved = _auto_tau(trace.values, AUTO_TAU_MASS_QUANTILE)
    else:
        resolved = float(tau)
    grid = trace.grid()
    labels, n = ndimage.label(grid >= resolved, structure=_CONNECTIVITY)
    if n == 0:
        return ThresholdedField(labels.astype(np.int32), 0, resolved, {})
    masses = ndimage.sum_labels(
        grid.astype(np.float64), labels, index=np.arange(1, n + 1)
    )
    order = np.lexsort((np.arange(n), -masses))
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[order + 1] = np.arange(1, n + 1, dtype=np.int32)
    relabeled = remap[labels]
    mass_by_label = {
        int(remap[old + 1]): float(masses[old]) for old in range(n)
    }
    return ThresholdedField(relabeled, int(n), resolved, mass_by_label)


def assign_clusters(
    cloud: PointCloud, thresholded: ThresholdedField, assign_radius: float = 2.0
) -> ClusterLabeling:
    """Give each token the label of the nearest supra-threshold voxel within
    assign_radius (measured in voxels), or None when none is that close."""
    if assign_radius <= 0:
        raise ValueError(f"assign_radius must be positive, got {assign_radius}")
    labels = thresholded.voxel_labels
    nz, ny, nx = labels.shape
    supra = np.argwhere(labels > 0)  # rows are (z, y, x)
    token_labels: dict[int, Optional[int]] = {}
    if supra.size == 0:
        token_labels = {tok.id: None for tok in cloud.tokens}
    else:
        tree = cKDTree(supra.astype(np.float64))
        # token positions in voxel index space, (z, y, x) to match labels
        scale = np.array([nx, ny, nz], dtype=np.float64)
        grid_pos = (cloud.positions * scale - 0.5)[:, ::-1]
        dist, idx = tree.query(grid_pos, distance_upper_bound=assign_radius * (1 + 1e-12))
        for row, tok in enumerate(cloud.tokens):
            if math.isinf(dist[row]):
                token_labels[tok.id] = None
            else:
                token_labels[tok.id] = int(labels[tuple(supra[idx[row]])])
    return ClusterLabeling(
        labels, token_labels, thresholded.n_components, thresholded.component_mass
    )


# ---------------------------------------------------------------------------
# Directional statistics
# ---------------------------------------------------------------------------


def _principal_plane(directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal basis of the two most energetic axes of the direction set,
    sign-fixed so equal inputs give equal outputs."""
    scatter = directions.T @ directions
    _, vecs = np.linalg.eigh(scatter)
    e1, e2 = vecs[:, -1], vecs[:, -2]
    if e1[np.argmax(np.abs(e1))] < 0:
        e1 = -e1
    if e2[np.argmax(np.abs(e2))] < 0:
        e2 = -e2
    return e1, e2


def direction_stats(traj: TrajectorySet, bins: int = 36) -> DirectionStats:
    """Histogram the step directions by azimuth in their dominant plane.

    bimodality = (h(t*) + h(t* + pi)) / (2 max_bin) with t* the bin whose
    antipodal pair holds the most mass; a clean back-and-forth walk scores 1,
    a one-sided walk 0.5. circular_variance is 1 - |mean unit phasor|.
    """
    if bins < 2 or bins % 2:
        raise ValueError(f"bins must be even and >= 2, got {bins}")
    dirs = traj.step_directions.reshape(-1, 3)
    if dirs.shape[0] == 0:
        raise ValueError("trajectory set has no steps")
    e1, e2 = _principal_plane(dirs)
    theta = np.arctan2(dirs @ e2, dirs @ e1)
    theta[theta >= math.pi] -= 2.0 * math.pi  # fold the closed endpoint
    counts, _ = np.histogram(theta, bins=bins, range=(-math.pi, math.pi))
    hist = counts / counts.sum()

    half = bins // 2
    pair_mass = hist[:half] + hist[half:]
    peak = float(hist.max())
    bimodality = float(pair_mass.max() / (2.0 * peak)) if peak > 0 else 0.0

    mean_vec = np.array([np.cos(theta).mean(), np.sin(theta).mean()])
    circular_variance = float(1.0 - np.linalg.norm(mean_vec))

    smooth = 0.25 * np.roll(hist, 1) + 0.5 * hist + 0.25 * np.roll(hist, -1)
    is_peak = (
        (smooth > np.roll(smooth, 1))
        & (smooth >= np.roll(smooth, -1))
        & (smooth > 2.0 / bins)
    )
    return DirectionStats(hist, bimodality, circular_variance, int(is_peak.sum()))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _surface_map(tokens_like) -> Mapping[int, str]:
    if isinstance(tokens_like, Mapping):
        return tokens_like
    if isinstance(tokens_like, (EmbeddingSet, PointCloud)):
        return {t.id: t.surface for t in tokens_like.tokens}
    return {t.id: t.surface for t in tokens_like}


def ranking_records(ranking: Ranking, tokens_like) -> list[dict]:
    """JSON-ready rows: surface, 1-based rank, raw score."""
    surfaces = _surface_map(tokens_like)
    return [
        {"surface": surfaces.get(tid, str(tid)), "rank": i + 1, "score": score}
        for i, (tid, score) in enumerate(ranking.entries)
    ]


def ranking_to_csv(ranking: Ranking, tokens_like) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["surface", "rank", "score"])
    for rec in ranking_records(ranking, tokens_like):
        writer.writerow([rec["surface"], rec["rank"], repr(rec["score"])])
    return out.getvalue()


def diff_table_to_csv(
    rows: Sequence[DiffRow],
    names: tuple[str, str, str] = ("rank_a", "rank_b", "rank_c"),
) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["surface", *names, "delta"])
    for r in rows:
        writer.writerow([r.surface, r.rank_a, r.rank_b, r.rank_c, r.delta])
    return out.getvalue()


def wordcloud_export(ranking: Ranking, tokens_like, k: int = 30) -> list[tuple[str, float]]:
    """Top-k (surface, weight) pairs with weights in (0, 1], best = 1.

    Distances are flipped through 1/(1+d) so that for every metric a bigger
    weight means a more similar token; weights are then scaled to peak at 1.
    """
    surfaces = _surface_map(tokens_like)
    top = ranking.entries[:k]
    if ranking.metric == "euclidean":
        sims = [1.0 / (1.0 + s) for _, s in top]
    else:
        sims = [0.0 if math.isinf(s) else math.exp(s) for _, s in top]
    peak = max(sims, default=0.0)
    if peak <= 0:
        return [(surfaces.get(tid, str(tid)), 0.0) for tid, _ in top]
    return [
        (surfaces.get(tid, str(tid)), sim / peak)
        for (tid, _), sim in zip(top, sims)
    ]

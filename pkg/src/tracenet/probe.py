"""Trace-guided exploration: probe agents random-walk over a frozen trace
field, tokens passed within a small radius are counted as discovered, and the
normalized counts become the network-reachability similarity ranking.

Probes differ from the fitting swarm: they never write to any field, they
reflect off the cube faces instead of respawning, and their turn rule eases
direction toward the sensed probe rather than jumping onto it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from numba import njit, prange
from scipy.spatial import cKDTree

from .core import (
    CounterRng,
    PointCloud,
    ScalarField,
    cone_sample,
    rng_u01,
    sample_raw,
    sphere_sample,
)

_DRAW_CONE = 0  # ..67
_DRAW_TURN = 70
_DRAW_TURN_ANGLE = 71
_STEP_SPAWN = 1 << 40

RADIUS_RANGE = (1.0 / 400.0, 1.0 / 200.0)


class DomainWarning(UserWarning):
    """Parameter outside its recommended operating range."""


@dataclass(frozen=True)
class ProbeParams:
    """Probe-walk configuration.

    discovery_radius is expressed as a fraction of the domain size; values
    outside [1/400, 1/200] work but warn, since the counts become either too
    sparse or too blurry to rank with.
    """

    n_probes: int = 900
    n_steps: int = 500
    sense_distance: float = 0.01
    sense_angle: float = 0.5
    move_distance: float = 0.004
    discovery_radius: float = 1.0 / 300.0
    trace_floor: float = 1e-9
    count_once_per_agent: bool = False  # sensitivity mode: ignore dwell time
    snap_seed_to_trace: bool = False  # seed at the strongest nearby trace voxel

    def __post_init__(self):
        if self.n_probes < 1:
            raise ValueError(f"n_probes must be >= 1, got {self.n_probes}")
        if self.n_steps < 0:
            raise ValueError(f"n_steps must be >= 0, got {self.n_steps}")
        if not 0.0 < self.sense_angle < np.pi / 2:
            raise ValueError(f"sense_angle must be in (0, pi/2), got {self.sense_angle}")
        if self.sense_distance <= 0.0 or self.move_distance <= 0.0:
            raise ValueError("sense_distance and move_distance must be positive")
        if self.discovery_radius <= 0.0:
            raise ValueError(f"discovery_radius must be positive, got {self.discovery_radius}")
        if self.trace_floor <= 0.0:
            raise ValueError(f"trace_floor must be positive, got {self.trace_floor}")
        if not RADIUS_RANGE[0] <= self.discovery_radius <= RADIUS_RANGE[1]:
            warnings.warn(
                f"discovery_radius {self.discovery_radius:.5f} outside the "
                f"recommended [{RADIUS_RANGE[0]:.5f}, {RADIUS_RANGE[1]:.5f}]",
                DomainWarning,
                stacklevel=2,
            )


class ProbeAgent(NamedTuple):
    position: np.ndarray  # (3,)
    direction: np.ndarray  # (3,) unit


@dataclass
class TrajectorySet:
    """All probe walks from one seed.

    polylines[p, s] is probe p's position after s steps (so row 0 is the
    seed); step_directions[p, s] is its heading after completing step s.
    Consecutive vertices are exactly move_distance apart except where a
    boundary reflection folded the step short.
    """

    seed: np.ndarray  # (3,)
    polylines: np.ndarray  # (n_probes, n_steps+1, 3)
    step_directions: np.ndarray  # (n_probes, n_steps, 3)

    def __post_init__(self):
        self.seed = np.asarray(self.seed, dtype=np.float64)
        self.polylines = np.asarray(self.polylines, dtype=np.float64)
        self.step_directions = np.asarray(self.step_directions, dtype=np.float64)
        if self.seed.shape != (3,):
            raise ValueError(f"seed must be a 3D point, got {self.seed.shape}")
        if self.polylines.ndim != 3 or self.polylines.shape[2] != 3:
            raise ValueError(f"polylines must be (n, steps+1, 3), got {self.polylines.shape}")
        n, s1, _ = self.polylines.shape
        if self.step_directions.shape != (n, s1 - 1, 3):
            raise ValueError(
                f"step_directions {self.step_directions.shape} inconsistent "
                f"with polylines {self.polylines.shape}"
            )

    @property
    def n_probes(self) -> int:
        return self.polylines.shape[0]

    @property
    def n_steps(self) -> int:
        return self.polylines.shape[1] - 1

    def step_positions(self) -> np.ndarray:
        """All post-step vertices, flattened to (n_probes * n_steps, 3)."""
        return self.polylines[:, 1:, :].reshape(-1, 3)

    def validate(self, move_distance: float):
        if not np.allclose(self.polylines[:, 0, :], self.seed, atol=1e-12):
            raise ValueError("all polylines must start at the seed")
        steps = np.diff(self.polylines, axis=1)
        lengths = np.linalg.norm(steps, axis=2)
        # reflection folds a step shorter, never longer
        if np.any(lengths > move_distance + 1e-9):
            raise ValueError("step longer than move_distance found")


@dataclass
class DiscoveryCounts:
    """Per-token proximity event counts and their sum-normalized scores.

    counts holds every discovered token (count > 0). normalized excludes the
    query (any token sitting within discovery_radius of the seed) and sums to
    1 over what remains, or is empty when nothing else was discovered.
    """

    counts: dict[int, int]
    normalized: dict[int, float]

    def __post_init__(self):
        if any(c <= 0 for c in self.counts.values()):
            raise ValueError("counts must hold only positive entries")
        if self.normalized:
            total = sum(self.normalized.values())
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"normalized scores sum to {total}, not 1")
        if not set(self.normalized) <= set(self.counts):
            raise ValueError("normalized contains tokens missing from counts")


@dataclass
class Ranking:
    """Ordered similarity list for one query token, best entry first."""

    query: int
    metric: str
    entries: list[tuple[int, float]]

    def __post_init__(self):
        if self.metric not in ("mcpm", "euclidean", "cosine"):
            raise ValueError(f"unknown metric {self.metric!r}")
        if any(tid == self.query for tid, _ in self.entries):
            raise ValueError("query must not appear in its own ranking")
        scores = [s for _, s in self.entries]
        if self.metric == "euclidean":
            ok = all(a <= b + 1e-12 for a, b in zip(scores, scores[1:]))
        else:
            ok = all(a >= b - 1e-12 for a, b in zip(scores, scores[1:]))
        if not ok:
            raise ValueError(f"entries out of order for metric {self.metric}")

    def ids(self) -> list[int]:
        return [tid for tid, _ in self.entries]

    def rank_of(self, token_id: int) -> Optional[int]:
        """1-based rank, or None if absent."""
        for i, (tid, _) in enumerate(self.entries):
            if tid == token_id:
                return i + 1
        return None


# ---------------------------------------------------------------------------
# Walk kernels
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _turn_probability(p0, p1, eps):
    # floor both probes: (p1+eps)/(p0+p1+2*eps), defined even on a dead trace
    return (p1 + eps) / (p0 + p1 + 2.0 * eps)


@njit(cache=True, inline="always")
def _rotate_toward(dx, dy, dz, tx, ty, tz, gap, frac):
    """Rotate d toward t by frac of the angular gap along their great circle.

    0 < frac < 1 lands strictly between the two directions.
    """
    if gap < 1e-12:
        return tx, ty, tz
    beta = frac * gap
    s = math.sin(gap)
    a = math.sin(gap - beta) / s
    b = math.sin(beta) / s
    rx = a * dx + b * tx
    ry = a * dy + b * ty
    rz = a * dz + b * tz
    n = math.sqrt(rx * rx + ry * ry + rz * rz)
    return rx / n, ry / n, rz / n


@njit(cache=True, inline="always")
def _reflect(c, d):
    """Fold coordinate c back into [0, 1], flipping d on each fold."""
    for _ in range(4):
        if c < 0.0:
            c = -c
            d = -d
        elif c > 1.0:
            c = 2.0 - c
            d = -d
        else:
            break
    return c, d


@njit(cache=True, inline="always")
def _probe_step_raw(
    x, y, z, dx, dy, dz,
    trace_values, nx, ny, nz,
    sense_distance, sense_angle, move_distance, trace_floor,
    seed, stream, step,
):
    p0 = sample_raw(
        trace_values, nx, ny, nz,
        x + dx * sense_distance, y + dy * sense_distance, z + dz * sense_distance,
    )
    cx, cy, cz, gap, _ = cone_sample(dx, dy, dz, sense_angle, seed, stream, step, _DRAW_CONE)
    p1 = sample_raw(
        trace_values, nx, ny, nz,
        x + cx * sense_distance, y + cy * sense_distance, z + cz * sense_distance,
    )
    if rng_u01(seed, stream, step, _DRAW_TURN) < _turn_probability(p0, p1, trace_floor):
        frac = rng_u01(seed, stream, step, _DRAW_TURN_ANGLE)
        dx, dy, dz = _rotate_toward(dx, dy, dz, cx, cy, cz, gap, frac)
    x += dx * move_distance
    y += dy * move_distance
    z += dz * move_distance
    x, dx = _reflect(x, dx)
    y, dy = _reflect(y, dy)
    z, dz = _reflect(z, dz)
    return x, y, z, dx, dy, dz


@njit(cache=True, parallel=True)
def _walk_probes(
    polylines, step_directions,
    trace_values, nx, ny, nz,
    sx, sy, sz,
    sense_distance, sense_angle, move_distance, trace_floor,
    seed,
):
    n_probes = polylines.shape[0]
    n_steps = polylines.shape[1] - 1
    for p in prange(n_probes):
        x, y, z = sx, sy, sz
        dx, dy, dz, _ = sphere_sample(seed, p, _STEP_SPAWN, 0)
        polylines[p, 0, 0] = x
        polylines[p, 0, 1] = y
        polylines[p, 0, 2] = z
        for s in range(n_steps):
            x, y, z, dx, dy, dz = _probe_step_raw(
                x, y, z, dx, dy, dz,
                trace_values, nx, ny, nz,
                sense_distance, sense_angle, move_distance, trace_floor,
                seed, p, s,
            )
            polylines[p, s + 1, 0] = x
            polylines[p, s + 1, 1] = y
            polylines[p, s + 1, 2] = z
            step_directions[p, s, 0] = dx
            step_directions[p, s, 1] = dy
            step_directions[p, s, 2] = dz


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def probe_step(
    agent: ProbeAgent, trace: ScalarField, params: ProbeParams, rng: CounterRng
) -> ProbeAgent:
    """Advance a single probe one step: sense forward and in the cone, maybe
    ease the heading toward the cone probe, move, reflect at the walls.

    rng.stream addresses the probe, rng.step the step index; run_probes walks
    the identical substreams, so stepping one agent by hand reproduces its
    batch trajectory bit for bit.
    """
    nx, ny, nz = trace.dims
    x, y, z = agent.position
    dx, dy, dz = agent.direction
    x, y, z, dx, dy, dz = _probe_step_raw(
        x, y, z, dx, dy, dz,
        trace.values, nx, ny, nz,
        params.sense_distance, params.sense_angle, params.move_distance, params.trace_floor,
        rng.seed, rng.stream, rng.step,
    )
    return ProbeAgent(np.array([x, y, z]), np.array([dx, dy, dz]))


def run_probes(
    trace: ScalarField, seed_point: np.ndarray, params: ProbeParams, rng: CounterRng
) -> TrajectorySet:
    """Walk n_probes independent probes from seed_point over the frozen trace.

    Initial directions are uniform on the sphere. The trace is strictly
    read-only.
    """
    seed_point = np.asarray(seed_point, dtype=np.float64)
    if seed_point.shape != (3,):
        raise ValueError(f"seed must be a 3D point, got shape {seed_point.shape}")
    if np.any(seed_point < 0.0) or np.any(seed_point > 1.0):
        raise ValueError(f"seed {seed_point} outside the unit cube")
    nx, ny, nz = trace.dims
    polylines = np.empty((params.n_probes, params.n_steps + 1, 3), dtype=np.float64)
    step_directions = np.empty((params.n_probes, params.n_steps, 3), dtype=np.float64)
    _walk_probes(
        polylines, step_directions,
        trace.values, nx, ny, nz,
        seed_point[0], seed_point[1], seed_point[2],
        params.sense_distance, params.sense_angle, params.move_distance, params.trace_floor,
        rng.seed,
    )
    return TrajectorySet(seed_point, polylines, step_directions)


def discover(traj: TrajectorySet, cloud: PointCloud, params: ProbeParams) -> DiscoveryCounts:
    """Count proximity events: each post-step probe position increments every
    token within discovery_radius. Tokens within discovery_radius of the seed
    (normally just the query itself) are left out of the normalized scores.
    """
    if len(cloud) == 0:
        return DiscoveryCounts({}, {})
    pts = traj.step_positions()
    counts: dict[int, int] = {}
    if pts.shape[0] > 0:
        tree = cKDTree(pts)
        if params.count_once_per_agent:
            hits = tree.query_ball_point(cloud.positions, params.discovery_radius)
            n_steps = traj.n_steps
            for tid, idx in enumerate(hits):
                if idx:
                    agents = {i // n_steps for i in idx}
                    counts[cloud.tokens[tid].id] = len(agents)
        else:
            n_hits = tree.query_ball_point(
                cloud.positions, params.discovery_radius, return_length=True
            )
            for tid, c in enumerate(n_hits):
                if c > 0:
                    counts[cloud.tokens[tid].id] = int(c)

    at_seed = np.linalg.norm(cloud.positions - traj.seed, axis=1) <= params.discovery_radius
    excluded = {cloud.tokens[i].id for i in np.flatnonzero(at_seed)}
    total = sum(c for tid, c in counts.items() if tid not in excluded)
    normalized = (
        {tid: c / total for tid, c in counts.items() if tid not in excluded}
        if total > 0
        else {}
    )
    return DiscoveryCounts(counts, normalized)


def _snap_seed(trace: ScalarField, seed_point: np.ndarray, radius: float) -> np.ndarray:
    """Move the seed to the strongest trace voxel center within radius."""
    nx, ny, nz = trace.dims
    dims = np.array([nx, ny, nz], dtype=np.float64)
    lo = np.maximum(np.floor((seed_point - radius) * dims - 0.5).astype(int), 0)
    hi = np.minimum(np.ceil((seed_point + radius) * dims - 0.5).astype(int), np.array(trace.dims) - 1)
    best_val = -1.0
    best = seed_point
    g = trace.grid()
    for k in range(lo[2], hi[2] + 1):
        for j in range(lo[1], hi[1] + 1):
            for i in range(lo[0], hi[0] + 1):
                center = (np.array([i, j, k]) + 0.5) / dims
                if np.linalg.norm(center - seed_point) <= radius and g[k, j, i] > best_val:
                    best_val = g[k, j, i]
                    best = center
    return best


def mcpm_similarity(
    trace: ScalarField,
    cloud: PointCloud,
    query: Optional[int],
    params: ProbeParams,
    rng: CounterRng,
    n_repeats: int = 1,
    seed_point: Optional[np.ndarray] = None,
    with_trajectories: bool = False,
):
    """Network-reachability ranking: probes seeded at the query token, scores
    are discovery frequencies averaged over n_repeats independent walks.
    Ties break toward the smaller token id.

    Instead of a query token, an explicit seed_point may be given (query
    None); seeding at a token's exact coordinates walks the identical probes,
    so the two spellings produce the same entries. with_trajectories=True
    returns (ranking, [TrajectorySet per repeat]) instead of just the ranking.
    """
    if n_repeats < 1:
        raise ValueError(f"n_repeats must be >= 1, got {n_repeats}")
    if (query is None) == (seed_point is None):
        raise ValueError("give exactly one of query and seed_point")
    if query is not None:
        by_id = {t.id: i for i, t in enumerate(cloud.tokens)}
        if query not in by_id:
            raise KeyError(f"unknown query token id {query}")
        seed_point = cloud.positions[by_id[query]]
    else:
        seed_point = np.asarray(seed_point, dtype=np.float64)
    if params.snap_seed_to_trace:
        seed_point = _snap_seed(trace, seed_point, params.discovery_radius)

    scores: dict[int, float] = {}
    trajectories = []
    for rep in range(n_repeats):
        traj = run_probes(trace, seed_point, params, rng.derive(rep))
        if with_trajectories:
            trajectories.append(traj)
        found = discover(traj, cloud, params)
        for tid, val in found.normalized.items():
            scores[tid] = scores.get(tid, 0.0) + val / n_repeats

    entries = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    ranking = Ranking(
        query=query if query is not None else -1, metric="mcpm", entries=entries
    )
    return (ranking, trajectories) if with_trajectories else ranking

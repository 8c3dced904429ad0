"""Shared geometry primitives: tokens, point clouds, scalar lattice fields, and
the counter-based RNG used by every stochastic component.

Fields live on a regular lattice spanning the unit cube. Values are stored as a
flat float32 buffer in x-fastest order (lin = i + nx*(j + ny*k)), which is also
the on-disk payload layout, so buffers can be exported without reshuffling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit

# ---------------------------------------------------------------------------
# Counter-based RNG
#
# A splitmix64-style hash of (seed, stream, step, draw). Stateless: any draw is
# addressable directly, so per-agent substreams need no shared state and a run
# is reproducible regardless of scheduling or thread count.
# ---------------------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def rng_u64(seed, stream, step, draw):
    """Raw 64-bit output for draw index `draw` of substream (stream, step)."""
    h = _mix64(np.uint64(seed) + _GOLDEN)
    h = _mix64(h + np.uint64(stream) * _GOLDEN)
    h = _mix64(h + np.uint64(step) * _GOLDEN)
    h = _mix64(h + np.uint64(draw) * _GOLDEN)
    return h


@njit(cache=True, inline="always")
def rng_u01(seed, stream, step, draw):
    """Uniform double in [0, 1)."""
    return (rng_u64(seed, stream, step, draw) >> np.uint64(11)) * _INV_2_53


@dataclass(frozen=True)
class CounterRng:
    """Handle into the counter-based stream space.

    `stream` conventionally indexes the agent, `step` the simulation step.
    Substreams are derived by address, never by mutation, so two runs with the
    same seed produce bit-identical draws.
    """

    seed: int
    stream: int = 0
    step: int = 0

    def at(self, stream: Optional[int] = None, step: Optional[int] = None) -> "CounterRng":
        return CounterRng(
            self.seed,
            self.stream if stream is None else stream,
            self.step if step is None else step,
        )

    def uniform(self, draw: int) -> float:
        return float(rng_u01(self.seed, self.stream, self.step, draw))

    def derive(self, tag: int) -> "CounterRng":
        """Independent child generator re-keyed by tag (e.g. repeat index).

        The child seed is masked to 63 bits so it stays representable as a
        non-negative int64 when handed to compiled kernels.
        """
        return CounterRng(int(rng_u64(self.seed, 0xD1CE, tag, 0)) & (2**63 - 1))


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    """One embedded token: a vocabulary entry, or one occurrence in a sentence
    (then `meta` carries the source sentence)."""

    id: int
    surface: str
    meta: Optional[str] = None

    def __post_init__(self):
        if not self.surface:
            raise ValueError(f"token {self.id}: empty surface")


def _tight_bbox(positions: np.ndarray) -> np.ndarray:
    return np.stack([positions.min(axis=0), positions.max(axis=0)])


@dataclass
class PointCloud:
    """Tokens with 3D positions. Simulation consumers require the cloud to be
    normalized into the unit cube first (see ingest.normalize_to_unit_cube)."""

    tokens: list[Token]
    positions: np.ndarray  # (N, 3) float64
    bbox_original: np.ndarray = None  # (2, 3): bounds before normalization

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError(f"positions must be (N, 3), got {self.positions.shape}")
        if len(self.tokens) != self.positions.shape[0]:
            raise ValueError(
                f"{len(self.tokens)} tokens but {self.positions.shape[0]} positions"
            )
        ids = [t.id for t in self.tokens]
        if len(set(ids)) != len(ids):
            raise ValueError("token ids must be unique")
        if self.bbox_original is None:
            self.bbox_original = _tight_bbox(self.positions) if len(self.tokens) else np.zeros((2, 3))
        self.bbox_original = np.asarray(self.bbox_original, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def is_normalized(self) -> bool:
        return bool(np.all(self.positions >= 0.0) and np.all(self.positions <= 1.0))

    def surface_index(self) -> dict[str, int]:
        return {t.surface: t.id for t in self.tokens}


UNIT_EXTENT = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])


@dataclass
class ScalarField:
    """Dense non-negative lattice over the unit cube.

    values is flat float32 in x-fastest order. `grid()` exposes the same
    buffer as a zero-copy (nz, ny, nx) array for ndimage-style filtering.
    """

    dims: tuple[int, int, int]
    values: np.ndarray

    def __post_init__(self):
        nx, ny, nz = self.dims
        if min(nx, ny, nz) < 1:
            raise ValueError(f"dims must be positive, got {self.dims}")
        self.values = np.ascontiguousarray(self.values, dtype=np.float32).ravel()
        if self.values.size != nx * ny * nz:
            raise ValueError(
                f"values has {self.values.size} entries, dims {self.dims} need {nx * ny * nz}"
            )
        if self.values.size and float(self.values.min()) < 0.0:
            raise ValueError("field values must be non-negative")

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "ScalarField":
        nx, ny, nz = (int(d) for d in dims)
        return cls((nx, ny, nz), np.zeros(nx * ny * nz, dtype=np.float32))

    def grid(self) -> np.ndarray:
        """(nz, ny, nx) C-contiguous view of the x-fastest buffer."""
        nx, ny, nz = self.dims
        return self.values.reshape(nz, ny, nx)

    def total_mass(self) -> float:
        # double accumulation: sums routinely exceed 1e6 terms
        return float(np.sum(self.values, dtype=np.float64))

    def copy(self) -> "ScalarField":
        return ScalarField(self.dims, self.values.copy())

    @property
    def world_extent(self) -> np.ndarray:
        return UNIT_EXTENT.copy()

    def voxel_size(self) -> np.ndarray:
        return 1.0 / np.asarray(self.dims, dtype=np.float64)


# ---------------------------------------------------------------------------
# Trilinear sampling / splatting
#
# Voxel (i, j, k) is centered at ((i+0.5)/nx, (j+0.5)/ny, (k+0.5)/nz).
# Sampling clamps to the edge so it is total on the closed cube; splats are
# dropped outside the cube and otherwise conserve mass exactly (boundary
# stencil corners fold onto edge voxels).
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _cell(coord, n):
    g = coord * n - 0.5
    i0 = int(math.floor(g))
    f = g - i0
    lo = min(max(i0, 0), n - 1)
    hi = min(max(i0 + 1, 0), n - 1)
    return lo, hi, f


@njit(cache=True, inline="always")
def sample_raw(values, nx, ny, nz, x, y, z):
    """Trilinear sample with clamp-to-edge; operates on the flat buffer."""
    x = min(max(x, 0.0), 1.0)
    y = min(max(y, 0.0), 1.0)
    z = min(max(z, 0.0), 1.0)
    ix0, ix1, fx = _cell(x, nx)
    iy0, iy1, fy = _cell(y, ny)
    iz0, iz1, fz = _cell(z, nz)
    sxy = nx * ny
    c00 = values[ix0 + nx * iy0 + sxy * iz0] * (1 - fx) + values[ix1 + nx * iy0 + sxy * iz0] * fx
    c10 = values[ix0 + nx * iy1 + sxy * iz0] * (1 - fx) + values[ix1 + nx * iy1 + sxy * iz0] * fx
    c01 = values[ix0 + nx * iy0 + sxy * iz1] * (1 - fx) + values[ix1 + nx * iy0 + sxy * iz1] * fx
    c11 = values[ix0 + nx * iy1 + sxy * iz1] * (1 - fx) + values[ix1 + nx * iy1 + sxy * iz1] * fx
    return (c00 * (1 - fy) + c10 * fy) * (1 - fz) + (c01 * (1 - fy) + c11 * fy) * fz


@njit(cache=True, inline="always")
def splat_raw(values, nx, ny, nz, x, y, z, amount):
    """Trilinear splat into the flat buffer; silently drops points outside the
    cube (simulation respawns those agents instead)."""
    if x < 0.0 or x > 1.0 or y < 0.0 or y > 1.0 or z < 0.0 or z > 1.0:
        return
    ix0, ix1, fx = _cell(x, nx)
    iy0, iy1, fy = _cell(y, ny)
    iz0, iz1, fz = _cell(z, nz)
    sxy = nx * ny
    wx0 = 1 - fx
    wy0 = 1 - fy
    wz0 = 1 - fz
    values[ix0 + nx * iy0 + sxy * iz0] += amount * wx0 * wy0 * wz0
    values[ix1 + nx * iy0 + sxy * iz0] += amount * fx * wy0 * wz0
    values[ix0 + nx * iy1 + sxy * iz0] += amount * wx0 * fy * wz0
    values[ix1 + nx * iy1 + sxy * iz0] += amount * fx * fy * wz0
    values[ix0 + nx * iy0 + sxy * iz1] += amount * wx0 * wy0 * fz
    values[ix1 + nx * iy0 + sxy * iz1] += amount * fx * wy0 * fz
    values[ix0 + nx * iy1 + sxy * iz1] += amount * wx0 * fy * fz
    values[ix1 + nx * iy1 + sxy * iz1] += amount * fx * fy * fz


@njit(cache=True)
def _sample_many(values, nx, ny, nz, pts, out):
    for i in range(pts.shape[0]):
        out[i] = sample_raw(values, nx, ny, nz, pts[i, 0], pts[i, 1], pts[i, 2])


@njit(cache=True)
def _splat_many(values, nx, ny, nz, pts, amounts):
    for i in range(pts.shape[0]):
        splat_raw(values, nx, ny, nz, pts[i, 0], pts[i, 1], pts[i, 2], amounts[i])


def sample_trilinear(fld: ScalarField, p: np.ndarray) -> float | np.ndarray:
    """Trilinear interpolation of the field at p.

    p may be a single (3,) point or an (N, 3) batch. Points on or past the
    boundary use the clamp-to-edge policy, so the call is total.
    """
    nx, ny, nz = fld.dims
    pts = np.atleast_2d(np.asarray(p, dtype=np.float64))
    out = np.empty(pts.shape[0], dtype=np.float64)
    _sample_many(fld.values, nx, ny, nz, pts, out)
    return float(out[0]) if np.asarray(p).ndim == 1 else out


def splat_trilinear(fld: ScalarField, p: np.ndarray, amount: float | np.ndarray) -> ScalarField:
    """Deposit `amount` at p, distributed over the 8 surrounding voxels.

    Mutates and returns the field. Total mass grows by exactly `amount` for
    points inside the cube; outside points are dropped.
    """
    nx, ny, nz = fld.dims
    pts = np.atleast_2d(np.asarray(p, dtype=np.float64))
    amounts = np.broadcast_to(np.asarray(amount, dtype=np.float64), (pts.shape[0],))
    if np.any(amounts < 0):
        raise ValueError("splat amount must be non-negative")
    _splat_many(fld.values, nx, ny, nz, pts, np.ascontiguousarray(amounts))
    return fld


# ---------------------------------------------------------------------------
# Direction sampling helpers shared by the swarm and the probes
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def _onb(dx, dy, dz):
    """Orthonormal basis completing unit vector d (branchless, stable at the
    poles)."""
    s = 1.0 if dz >= 0.0 else -1.0
    a = -1.0 / (s + dz)
    b = dx * dy * a
    e1x = 1.0 + s * dx * dx * a
    e1y = s * b
    e1z = -s * dx
    e2x = b
    e2y = s + dy * dy * a
    e2z = -dy
    return e1x, e1y, e1z, e2x, e2y, e2z


@njit(cache=True, inline="always")
def _unit_disk(seed, stream, step, draw):
    """Rejection-sample a direction on the unit circle; returns (cos, sin,
    next_draw)."""
    for k in range(32):
        u = 2.0 * rng_u01(seed, stream, step, draw + 2 * k) - 1.0
        v = 2.0 * rng_u01(seed, stream, step, draw + 2 * k + 1) - 1.0
        s = u * u + v * v
        if 1e-12 < s <= 1.0:
            r = math.sqrt(s)
            return u / r, v / r, draw + 2 * k + 2
    return 1.0, 0.0, draw + 64


@njit(cache=True, inline="always")
def cone_sample(dx, dy, dz, half_angle, seed, stream, step, draw):
    """Direction at angular offset theta ~ U(0, half_angle), azimuth uniform,
    around d. Returns (x, y, z, theta, next_draw)."""
    theta = rng_u01(seed, stream, step, draw) * half_angle
    cphi, sphi, draw = _unit_disk(seed, stream, step, draw + 1)
    e1x, e1y, e1z, e2x, e2y, e2z = _onb(dx, dy, dz)
    st = math.sin(theta)
    ct = math.cos(theta)
    px = ct * dx + st * (cphi * e1x + sphi * e2x)
    py = ct * dy + st * (cphi * e1y + sphi * e2y)
    pz = ct * dz + st * (cphi * e1z + sphi * e2z)
    n = math.sqrt(px * px + py * py + pz * pz)
    return px / n, py / n, pz / n, theta, draw


@njit(cache=True, inline="always")
def sphere_sample(seed, stream, step, draw):
    """Uniform direction on the unit sphere. Returns (x, y, z, next_draw)."""
    z = 2.0 * rng_u01(seed, stream, step, draw) - 1.0
    cphi, sphi, draw = _unit_disk(seed, stream, step, draw + 1)
    r = math.sqrt(max(0.0, 1.0 - z * z))
    return r * cphi, r * sphi, z, draw

"""Transport-network fitting: a Physarum-inspired swarm wanders a normalized
point cloud, guided by a decaying deposit field that the data constantly
re-seeds, and leaves behind a trace field (per-step agent density) whose
windowed average is the fitted network.

Step structure (one mcpm_step):
  1. sense   - each agent reads the deposit at a forward probe and at one
               probe drawn uniformly in the sensing cone, both at
               sense_distance
  2. steer   - switch to the cone probe's direction with probability
               p1^s / (p0^s + p1^s), sharpness s
  3. advance - move move_distance; agents leaving the cube respawn at a
               random data point with a random direction
  4. deposit - every agent splats agent_deposit into the deposit field and
               unit mass into the step's density
  5. re-seed - every data point splats data_deposit into the deposit field
  6. relax   - deposit decays by (1 - decay), then diffusion_passes rounds
               of a normalized 3x3x3 box blur

Sensing always reads the deposit state left by the previous step's relax
phase; within a step agents never see each other's fresh deposits. The trace
is never decayed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from numba import njit, prange
from scipy import ndimage

from .core import (
    CounterRng,
    PointCloud,
    ScalarField,
    cone_sample,
    rng_u01,
    sample_raw,
    sphere_sample,
    splat_raw,
)

# fixed per-(agent, step) draw indices; cone/sphere rejection loops stay
# inside the gaps, so every random decision has a stable address
_DRAW_CONE = 0  # ..67
_DRAW_STEER = 70
_DRAW_RESPAWN = 71  # ..73
_DRAW_RESPAWN_DIR = 80  # ..145
_STEP_SPAWN = 1 << 40  # pseudo-step for initial placement


@dataclass(frozen=True)
class McpmParams:
    """Swarm configuration. Defaults suit a full-resolution fit; small grids
    want sense_distance and move_distance rescaled to a few voxels.

    move_distance = 0 is allowed as a frozen-swarm diagnostic mode; all other
    orderings are enforced.
    """

    n_agents: int = 1_000_000
    n_steps: int = 600
    grid_res: tuple[int, int, int] = (256, 256, 256)
    sense_distance: float = 0.005
    sense_angle: float = 0.35
    move_distance: float = 0.0025
    data_deposit: float = 10.0
    agent_deposit: float = 0.1
    decay: float = 0.1
    diffusion_passes: int = 1
    sharpness: float = 2.0
    trace_window: int = 100
    spawn_uniform: bool = False  # ablation: spawn/respawn anywhere in the cube

    def __post_init__(self):
        if self.n_agents < 1:
            raise ValueError(f"n_agents must be >= 1, got {self.n_agents}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if len(self.grid_res) != 3 or min(self.grid_res) < 2:
            raise ValueError(f"grid_res must be three dims >= 2, got {self.grid_res}")
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must be in (0, 1), got {self.decay}")
        if self.move_distance < 0.0 or self.sense_distance <= self.move_distance:
            raise ValueError(
                "need sense_distance > move_distance >= 0, got "
                f"sense={self.sense_distance} move={self.move_distance}"
            )
        if not 0.0 < self.sense_angle < np.pi / 2:
            raise ValueError(f"sense_angle must be in (0, pi/2), got {self.sense_angle}")
        if self.sharpness < 0.0:
            raise ValueError(f"sharpness must be >= 0, got {self.sharpness}")
        if self.data_deposit < 0.0 or self.agent_deposit < 0.0:
            raise ValueError("deposit amounts must be >= 0")
        if self.diffusion_passes < 0:
            raise ValueError(f"diffusion_passes must be >= 0, got {self.diffusion_passes}")
        if self.trace_window < 1:
            raise ValueError(f"trace_window must be >= 1, got {self.trace_window}")


@dataclass
class SwarmState:
    """Positions and unit directions for the whole swarm, one row per agent."""

    positions: np.ndarray  # (N, 3) float64, inside the unit cube
    directions: np.ndarray  # (N, 3) float64, unit length

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        self.directions = np.ascontiguousarray(self.directions, dtype=np.float64)
        if self.positions.shape != self.directions.shape or self.positions.shape[1:] != (3,):
            raise ValueError(
                f"positions {self.positions.shape} and directions "
                f"{self.directions.shape} must both be (N, 3)"
            )

    def __len__(self) -> int:
        return self.positions.shape[0]

    def validate(self):
        if np.any(self.positions < 0.0) or np.any(self.positions > 1.0):
            raise ValueError("agent positions outside the unit cube")
        norms = np.linalg.norm(self.directions, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("agent directions not unit length")


@dataclass
class McpmResult:
    trace: ScalarField
    deposit: ScalarField
    steps_run: int
    convergence_series: list[float] = field(default_factory=list)

    def __post_init__(self):
        if len(self.convergence_series) != self.steps_run:
            raise ValueError(
                f"convergence_series has {len(self.convergence_series)} entries "
                f"for {self.steps_run} steps"
            )


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------


@njit(cache=True, inline="always")
def steer_probability(p0, p1, sharpness):
    """Probability of switching to the cone probe's direction.

    Sharpened competition q1/(q0+q1) with q_i = p_i^sharpness; the 0/0 case
    (no deposit at either probe) is an even coin.
    """
    q0 = p0**sharpness
    q1 = p1**sharpness
    tot = q0 + q1
    if tot <= 0.0:
        return 0.5
    return q1 / tot


@njit(cache=True, inline="always")
def _spawn_one(data_pts, spawn_uniform, seed, agent, step):
    if spawn_uniform:
        x = rng_u01(seed, agent, step, _DRAW_RESPAWN)
        y = rng_u01(seed, agent, step, _DRAW_RESPAWN + 1)
        z = rng_u01(seed, agent, step, _DRAW_RESPAWN + 2)
    else:
        j = int(rng_u01(seed, agent, step, _DRAW_RESPAWN) * data_pts.shape[0])
        if j >= data_pts.shape[0]:
            j = data_pts.shape[0] - 1
        x = data_pts[j, 0]
        y = data_pts[j, 1]
        z = data_pts[j, 2]
    dx, dy, dz, _ = sphere_sample(seed, agent, step, _DRAW_RESPAWN_DIR)
    return x, y, z, dx, dy, dz


@njit(cache=True, parallel=True)
def _spawn_swarm(positions, directions, data_pts, spawn_uniform, seed):
    for a in prange(positions.shape[0]):
        x, y, z, dx, dy, dz = _spawn_one(data_pts, spawn_uniform, seed, a, _STEP_SPAWN)
        positions[a, 0] = x
        positions[a, 1] = y
        positions[a, 2] = z
        directions[a, 0] = dx
        directions[a, 1] = dy
        directions[a, 2] = dz


@njit(cache=True, parallel=True)
def _advance_swarm(
    positions,
    directions,
    deposit_values,
    nx,
    ny,
    nz,
    data_pts,
    sense_distance,
    sense_angle,
    move_distance,
    sharpness,
    spawn_uniform,
    seed,
    step,
):
    """Phases 1-3 for every agent. Reads the deposit, writes only each agent's
    own row, so the schedule cannot affect the result."""
    for a in prange(positions.shape[0]):
        x = positions[a, 0]
        y = positions[a, 1]
        z = positions[a, 2]
        dx = directions[a, 0]
        dy = directions[a, 1]
        dz = directions[a, 2]

        p0 = sample_raw(
            deposit_values, nx, ny, nz,
            x + dx * sense_distance, y + dy * sense_distance, z + dz * sense_distance,
        )
        cx, cy, cz, _, _ = cone_sample(dx, dy, dz, sense_angle, seed, a, step, _DRAW_CONE)
        p1 = sample_raw(
            deposit_values, nx, ny, nz,
            x + cx * sense_distance, y + cy * sense_distance, z + cz * sense_distance,
        )

        if rng_u01(seed, a, step, _DRAW_STEER) < steer_probability(p0, p1, sharpness):
            dx = cx
            dy = cy
            dz = cz

        x += dx * move_distance
        y += dy * move_distance
        z += dz * move_distance
        if x < 0.0 or x > 1.0 or y < 0.0 or y > 1.0 or z < 0.0 or z > 1.0:
            x, y, z, dx, dy, dz = _spawn_one(data_pts, spawn_uniform, seed, a, step)

        positions[a, 0] = x
        positions[a, 1] = y
        positions[a, 2] = z
        directions[a, 0] = dx
        directions[a, 1] = dy
        directions[a, 2] = dz


@njit(cache=True)
def _deposit_swarm(positions, deposit_values, agent_deposit, density_values, nx, ny, nz):
    # serial, in agent order: float accumulation stays bit-identical no matter
    # how many threads ran the advance phase
    for a in range(positions.shape[0]):
        x = positions[a, 0]
        y = positions[a, 1]
        z = positions[a, 2]
        splat_raw(deposit_values, nx, ny, nz, x, y, z, agent_deposit)
        splat_raw(density_values, nx, ny, nz, x, y, z, 1.0)


@njit(cache=True)
def _deposit_data(data_pts, deposit_values, data_deposit, nx, ny, nz):
    for i in range(data_pts.shape[0]):
        splat_raw(
            deposit_values, nx, ny, nz,
            data_pts[i, 0], data_pts[i, 1], data_pts[i, 2], data_deposit,
        )


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------


def splat_data(cloud: PointCloud, params: McpmParams) -> ScalarField:
    """Initial deposit field: data_deposit splatted at every token position."""
    if len(cloud) == 0:
        raise ValueError("cannot splat an empty cloud")
    fld = ScalarField.zeros(params.grid_res)
    nx, ny, nz = fld.dims
    _deposit_data(cloud.positions, fld.values, params.data_deposit, nx, ny, nz)
    return fld


def spawn_swarm(cloud: PointCloud, params: McpmParams, rng: CounterRng) -> SwarmState:
    """Place agents at uniformly chosen data-point positions (or uniformly in
    the cube under spawn_uniform) with isotropic random directions."""
    if len(cloud) == 0:
        raise ValueError("cannot spawn onto an empty cloud")
    n = params.n_agents
    positions = np.empty((n, 3), dtype=np.float64)
    directions = np.empty((n, 3), dtype=np.float64)
    _spawn_swarm(positions, directions, cloud.positions, params.spawn_uniform, rng.seed)
    return SwarmState(positions, directions)


def _relax_deposit(deposit: ScalarField, params: McpmParams, scratch: np.ndarray) -> None:
    """Phase 6: decay then blur, fused. Blur normalizes by 27 with zero
    padding outside the cube, so a little mass bleeds off at the walls."""
    grid = deposit.grid()
    keep = 1.0 - params.decay
    if params.diffusion_passes == 0:
        np.multiply(deposit.values, keep, out=deposit.values)
        return
    sgrid = scratch.reshape(grid.shape)
    for _ in range(params.diffusion_passes):
        ndimage.uniform_filter(grid, size=3, mode="constant", cval=0.0, output=sgrid)
        grid, sgrid = sgrid, grid
    if grid.base is not deposit.values:
        np.multiply(grid, keep, out=deposit.grid())
    else:
        np.multiply(deposit.values, keep, out=deposit.values)


def mcpm_step(
    swarm: SwarmState,
    deposit: ScalarField,
    trace: ScalarField,
    params: McpmParams,
    rng: CounterRng,
    data_positions: np.ndarray,
    step_density: Optional[np.ndarray] = None,
    _scratch: Optional[np.ndarray] = None,
) -> tuple[SwarmState, ScalarField, ScalarField]:
    """One synchronous swarm step (see module docstring for the phase order).

    rng.step identifies the step; agents map to RNG substreams by index.
    step_density, when given, receives this step's unit-mass agent density
    (zeroed first); the same density is always added to the running trace.
    """
    nx, ny, nz = deposit.dims
    if trace.dims != deposit.dims:
        raise ValueError(f"trace dims {trace.dims} != deposit dims {deposit.dims}")
    own_density = step_density is None
    if own_density:
        step_density = np.zeros(deposit.values.size, dtype=np.float32)
    else:
        if step_density.size != deposit.values.size:
            raise ValueError("step_density size mismatch")
        step_density[:] = 0.0

    _advance_swarm(
        swarm.positions,
        swarm.directions,
        deposit.values,
        nx,
        ny,
        nz,
        data_positions,
        params.sense_distance,
        params.sense_angle,
        params.move_distance,
        params.sharpness,
        params.spawn_uniform,
        rng.seed,
        rng.step,
    )
    _deposit_swarm(swarm.positions, deposit.values, params.agent_deposit, step_density, nx, ny, nz)
    _deposit_data(data_positions, deposit.values, params.data_deposit, nx, ny, nz)

    scratch = _scratch if _scratch is not None else np.empty_like(deposit.values)
    _relax_deposit(deposit, params, scratch)

    trace.values += step_density
    return swarm, deposit, trace


def fit_trace(cloud: PointCloud, params: McpmParams, rng: CounterRng) -> McpmResult:
    """Run the full fit and return the windowed-average trace.

    The result trace is the exact per-step density mean over the final
    trace_window steps (or all steps, for very short runs). The convergence
    series tracks the relative L1 change of an exponentially weighted mean of
    the step densities with memory trace_window; a literal sliding-window mean
    would need trace_window whole lattices.
    """
    if len(cloud) == 0:
        raise ValueError("cannot fit an empty cloud")
    if not cloud.is_normalized:
        raise ValueError("cloud must be normalized into the unit cube first")

    deposit = splat_data(cloud, params)
    trace = ScalarField.zeros(params.grid_res)
    swarm = spawn_swarm(cloud, params, rng)

    nvox = deposit.values.size
    density = np.zeros(nvox, dtype=np.float32)
    scratch = np.empty(nvox, dtype=np.float32)
    ema = np.zeros(nvox, dtype=np.float32)
    window = min(params.trace_window, params.n_steps)
    window_sum = np.zeros(nvox, dtype=np.float64)
    alpha = 1.0 / params.trace_window

    mass_cap = 2.0 * (
        len(cloud) * params.data_deposit + params.n_agents * params.agent_deposit
    ) / params.decay
    series: list[float] = []

    for step in range(params.n_steps):
        mcpm_step(
            swarm,
            deposit,
            trace,
            params,
            rng.at(step=step),
            cloud.positions,
            step_density=density,
            _scratch=scratch,
        )

        if step == 0:
            ema[:] = density
            series.append(1.0 if float(np.sum(ema, dtype=np.float64)) > 0 else 0.0)
        else:
            # relative change: alpha * ||d_t - ema_(t-1)||_1 / ||ema_t||_1
            np.subtract(density, ema, out=scratch)
            np.abs(scratch, out=scratch)
            change = alpha * float(np.sum(scratch, dtype=np.float64))
            ema *= 1.0 - alpha
            np.multiply(density, alpha, out=scratch)
            ema += scratch
            total = float(np.sum(ema, dtype=np.float64))
            series.append(change / total if total > 0.0 else 0.0)

        if step >= params.n_steps - window:
            window_sum += density

        dep_mass = deposit.total_mass()
        if dep_mass > mass_cap:
            raise RuntimeError(
                f"deposit mass {dep_mass:.3g} exceeded twice the steady-state "
                f"bound {mass_cap / 2:.3g} at step {step}"
            )

    out_trace = ScalarField(
        params.grid_res, (window_sum / window).astype(np.float32)
    )
    return McpmResult(
        trace=out_trace,
        deposit=deposit,
        steps_run=params.n_steps,
        convergence_series=series,
    )


def convergence_metric(result: McpmResult) -> float:
    """Final convergence-series value; a fit is converged below 0.01."""
    if not result.convergence_series:
        raise ValueError("empty convergence series")
    return float(result.convergence_series[-1])


CONVERGED_BELOW = 0.01

import math

import numpy as np
import pytest
from scipy import stats

from synth import (
    cloud_from_positions,
    constant_field,
    exp_tube_field,
    fibonacci_directions,
    tube_field,
)
from tracenet.core import CounterRng, ScalarField, sphere_sample
from tracenet.probe import (
    DiscoveryCounts,
    DomainWarning,
    ProbeAgent,
    ProbeParams,
    Ranking,
    TrajectorySet,
    _rotate_toward,
    _turn_probability,
    discover,
    mcpm_similarity,
    probe_step,
    run_probes,
)


def quick_params(**kw):
    base = dict(n_probes=50, n_steps=100)
    base.update(kw)
    return ProbeParams(**base)


class TestProbeParams:
    def test_defaults(self):
        p = ProbeParams()
        assert p.n_probes == 900
        assert p.n_steps == 500
        assert p.sense_distance == 0.01
        assert p.sense_angle == 0.5
        assert p.move_distance == 0.004
        assert p.discovery_radius == pytest.approx(1 / 300)
        assert p.trace_floor == 1e-9

    def test_radius_in_range_silent(self):
        import warnings as w

        for r in (1 / 400, 1 / 300, 1 / 200):
            with w.catch_warnings():
                w.simplefilter("error")
                ProbeParams(discovery_radius=r)

    @pytest.mark.parametrize("r", [1 / 500, 1 / 100])
    def test_radius_out_of_range_warns(self, r):
        with pytest.warns(DomainWarning):
            ProbeParams(discovery_radius=r)

    @pytest.mark.parametrize(
        "kw",
        [
            dict(n_probes=0),
            dict(sense_angle=0.0),
            dict(sense_angle=np.pi / 2),
            dict(move_distance=0.0),
            dict(discovery_radius=0.0),
            dict(trace_floor=0.0),
        ],
    )
    def test_invalid_rejected(self, kw):
        with pytest.raises(ValueError):
            ProbeParams(**kw)


class TestTurnProbability:
    def test_equal_probes_half(self):
        assert _turn_probability(2.0, 2.0, 1e-9) == 0.5
        assert _turn_probability(0.0, 0.0, 1e-9) == 0.5

    def test_zero_cone_probe_epsilon_small(self):
        p = _turn_probability(3.0, 0.0, 1e-9)
        assert p < 1e-9

    def test_zero_forward_probe_near_one(self):
        p = _turn_probability(0.0, 3.0, 1e-9)
        assert p > 1.0 - 1e-9

    def test_proportional(self):
        assert _turn_probability(1.0, 3.0, 0.0) == pytest.approx(0.75)


class TestRotateToward:
    def test_strictly_between(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            # a target within half a radian of d
            t, *_ = _make_cone_dir(d, rng, 0.5)
            gap = math.acos(np.clip(d @ t, -1, 1))
            frac = rng.uniform(0.05, 0.95)
            n = np.array(_rotate_toward(*d, *t, gap, frac))
            assert np.linalg.norm(n) == pytest.approx(1.0, abs=1e-12)
            a_dn = math.acos(np.clip(d @ n, -1, 1))
            a_nt = math.acos(np.clip(n @ t, -1, 1))
            # on the great-circle arc, partway along
            assert a_dn + a_nt == pytest.approx(gap, abs=1e-9)
            assert 0.0 < a_dn < gap
            assert a_dn == pytest.approx(frac * gap, abs=1e-9)

    def test_degenerate_gap_returns_target(self):
        d = np.array([0.0, 0.0, 1.0])
        n = np.array(_rotate_toward(*d, *d, 0.0, 0.3))
        np.testing.assert_allclose(n, d)


def _make_cone_dir(d, rng, half_angle):
    theta = rng.uniform(0.05, half_angle)
    # any unit vector orthogonal to d
    helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(d, helper)
    e1 /= np.linalg.norm(e1)
    t = math.cos(theta) * d + math.sin(theta) * e1
    return t / np.linalg.norm(t), theta


class TestProbeStep:
    def test_matches_batch_walk(self):
        # stepping one agent by hand replays its batch-kernel trajectory
        trace = tube_field((32, 32, 32), [0.2, 0.5, 0.5], [0.8, 0.5, 0.5], 0.05)
        params = quick_params(n_probes=3, n_steps=50)
        rng = CounterRng(77)
        traj = run_probes(trace, np.array([0.5, 0.5, 0.5]), params, rng)
        for p in range(3):
            dx, dy, dz, _ = sphere_sample(77, p, 1 << 40, 0)
            agent = ProbeAgent(np.array([0.5, 0.5, 0.5]), np.array([dx, dy, dz]))
            for s in range(50):
                agent = probe_step(agent, trace, params, CounterRng(77, stream=p, step=s))
                np.testing.assert_array_equal(agent.position, traj.polylines[p, s + 1])
                np.testing.assert_array_equal(agent.direction, traj.step_directions[p, s])

    def test_direction_stays_unit(self):
        trace = constant_field((16, 16, 16), 2.0)
        params = quick_params()
        agent = ProbeAgent(np.array([0.5, 0.5, 0.5]), np.array([1.0, 0.0, 0.0]))
        for s in range(200):
            agent = probe_step(agent, trace, params, CounterRng(5, stream=0, step=s))
            assert np.linalg.norm(agent.direction) == pytest.approx(1.0, abs=1e-9)
            assert np.all(agent.position >= 0) and np.all(agent.position <= 1)


class TestRunProbes:
    def test_zero_steps_polylines_are_seed(self):
        trace = constant_field((16, 16, 16))
        traj = run_probes(trace, np.array([0.3, 0.4, 0.5]), quick_params(n_steps=0), CounterRng(1))
        assert traj.polylines.shape == (50, 1, 3)
        assert np.all(traj.polylines[:, 0] == [0.3, 0.4, 0.5])

    def test_trace_read_only(self):
        trace = tube_field((24, 24, 24), [0.2, 0.5, 0.5], [0.8, 0.5, 0.5], 0.04)
        before = trace.values.copy()
        run_probes(trace, np.array([0.5, 0.5, 0.5]), quick_params(), CounterRng(2))
        np.testing.assert_array_equal(trace.values, before)

    def test_step_spacing_and_start(self):
        trace = constant_field((16, 16, 16))
        params = quick_params(n_probes=20, n_steps=300)
        traj = run_probes(trace, np.array([0.5, 0.5, 0.5]), params, CounterRng(3))
        traj.validate(params.move_distance)
        lengths = np.linalg.norm(np.diff(traj.polylines, axis=1), axis=2)
        # almost every step is exact; reflections fold a handful shorter
        exact = np.isclose(lengths, params.move_distance, atol=1e-12)
        assert exact.mean() > 0.95
        assert np.all(lengths <= params.move_distance + 1e-12)

    def test_seed_outside_cube_rejected(self):
        trace = constant_field((16, 16, 16))
        with pytest.raises(ValueError):
            run_probes(trace, np.array([1.2, 0.5, 0.5]), quick_params(), CounterRng(4))

    def test_deterministic(self):
        trace = tube_field((24, 24, 24), [0.2, 0.5, 0.5], [0.8, 0.5, 0.5], 0.04)
        a = run_probes(trace, np.array([0.5, 0.5, 0.5]), quick_params(), CounterRng(9))
        b = run_probes(trace, np.array([0.5, 0.5, 0.5]), quick_params(), CounterRng(9))
        assert np.array_equal(a.polylines, b.polylines)

    def test_constant_trace_endpoints_isotropic(self):
        # aggregated over 20 seeds, the grand-mean displacement must sit
        # within the CLT bound for an unbiased walk
        trace = constant_field((8, 8, 8), 1.0)
        params = quick_params(n_probes=200, n_steps=500)
        seed_pt = np.array([0.5, 0.5, 0.5])
        ends = []
        for s in range(20):
            traj = run_probes(trace, seed_pt, params, CounterRng(1000 + s))
            ends.append(traj.polylines[:, -1, :] - seed_pt)
        mean_disp = np.concatenate(ends).mean(axis=0)
        bound = 3 * params.move_distance * math.sqrt(params.n_steps) / math.sqrt(params.n_probes)
        assert np.linalg.norm(mean_disp) < bound

    def test_follows_straight_filament(self):
        # capture needs sense_distance >> move_distance and a wide cone: the
        # turn rule only rotates by fractions of the cone gap per step, so the
        # turning radius must fit inside the tube's contrast zone
        trace = exp_tube_field((128, 128, 128), [0.1, 0.5, 0.5], [0.9, 0.5, 0.5], 0.005)
        params = ProbeParams(
            n_probes=100, n_steps=1000, sense_distance=0.01, sense_angle=1.5,
            move_distance=0.001,
        )
        seed_pt = np.array([0.5, 0.5, 0.5])
        traj = run_probes(trace, seed_pt, params, CounterRng(17))
        # residence over the late half, so early transients do not flatter
        # the guided run or penalize the control
        off = np.linalg.norm(traj.polylines[:, 501:, 1:] - 0.5, axis=-1)
        frac = float((off <= 0.05).mean())
        ctrl = run_probes(constant_field((8, 8, 8), 1.0), seed_pt, params, CounterRng(17))
        ctrl_off = np.linalg.norm(ctrl.polylines[:, 501:, 1:] - 0.5, axis=-1)
        ctrl_frac = float((ctrl_off <= 0.05).mean())
        assert frac >= 0.70
        assert frac >= 2 * ctrl_frac


def make_line_traj(seed, direction, n_steps, move):
    """Hand-built straight walk used as a discovery oracle."""
    direction = np.asarray(direction, dtype=np.float64)
    direction = direction / np.linalg.norm(direction)
    pts = seed + np.arange(n_steps + 1)[:, None] * move * direction
    return TrajectorySet(
        np.asarray(seed, dtype=np.float64),
        pts[None, :, :],
        np.broadcast_to(direction, (1, n_steps, 3)).copy(),
    )


class TestDiscover:
    def test_straight_line_matches_brute_force(self):
        seed = np.array([0.2, 0.5, 0.5])
        traj = make_line_traj(seed, [1, 0, 0], 200, 0.003)
        tokens = cloud_from_positions(
            [[0.5, 0.5, 0.5], [0.35, 0.502, 0.5], [0.9, 0.9, 0.9], [0.2, 0.5, 0.5]]
        )
        params = quick_params(discovery_radius=0.004)
        found = discover(traj, tokens, params)
        pts = traj.step_positions()
        for tid in range(4):
            want = int(
                (np.linalg.norm(pts - tokens.positions[tid], axis=1) <= 0.004).sum()
            )
            assert found.counts.get(tid, 0) == want

    def test_seed_token_excluded_from_normalized(self):
        seed = np.array([0.2, 0.5, 0.5])
        traj = make_line_traj(seed, [1, 0, 0], 100, 0.004)
        tokens = cloud_from_positions([[0.2, 0.5, 0.5], [0.4, 0.5, 0.5]])
        # radius strictly above the step length: the first step vertex sits
        # exactly one move from the seed token, and a radius equal to it would
        # leave inclusion to float rounding
        found = discover(traj, tokens, quick_params(discovery_radius=0.0045))
        assert 0 in found.counts  # the query is still counted
        assert 0 not in found.normalized  # but never scored
        assert found.normalized == {1: 1.0}

    def test_unreachable_token_zero(self):
        traj = make_line_traj(np.array([0.5, 0.5, 0.5]), [1, 0, 0], 50, 0.002)
        # farthest reach is move*n_steps + radius = 0.1 + 0.004
        tokens = cloud_from_positions([[0.7, 0.5, 0.5]])
        found = discover(traj, tokens, quick_params(discovery_radius=0.004))
        assert found.counts.get(0, 0) == 0

    def test_counts_monotone_in_radius(self):
        trace = tube_field((32, 32, 32), [0.2, 0.5, 0.5], [0.8, 0.5, 0.5], 0.05)
        traj = run_probes(trace, np.array([0.5, 0.5, 0.5]), quick_params(), CounterRng(23))
        rng = np.random.default_rng(4)
        tokens = cloud_from_positions(0.3 + 0.4 * rng.uniform(size=(40, 3)))
        small = discover(traj, tokens, quick_params(discovery_radius=1 / 400))
        large = discover(traj, tokens, quick_params(discovery_radius=1 / 200))
        for tid, c in small.counts.items():
            assert large.counts.get(tid, 0) >= c

    def test_once_per_agent_bounded_by_events(self):
        trace = constant_field((16, 16, 16))
        params = quick_params(n_probes=30, n_steps=200, discovery_radius=1 / 200)
        traj = run_probes(trace, np.array([0.5, 0.5, 0.5]), params, CounterRng(29))
        tokens = cloud_from_positions([[0.5, 0.52, 0.5], [0.48, 0.5, 0.5]])
        per_event = discover(traj, tokens, params)
        params_once = quick_params(
            n_probes=30, n_steps=200, discovery_radius=1 / 200, count_once_per_agent=True
        )
        per_agent = discover(traj, tokens, params_once)
        for tid, c in per_agent.counts.items():
            assert c <= per_event.counts[tid]
            assert c <= params.n_probes

    def test_nearby_counts_beat_far_counts(self):
        # the unguided walk discovers closer shells more often: paired
        # one-sided test over 50 independent runs
        trace = constant_field((8, 8, 8), 1.0)
        seed_pt = np.array([0.5, 0.5, 0.5])
        r = 0.1
        dirs = fibonacci_directions(48)
        tokens = cloud_from_positions(
            np.concatenate([seed_pt + r * dirs, seed_pt + 2 * r * dirs])
        )
        params = quick_params(n_probes=100, n_steps=400, discovery_radius=1 / 200)
        near, far = [], []
        for s in range(50):
            traj = run_probes(trace, seed_pt, params, CounterRng(5000 + s))
            found = discover(traj, tokens, params)
            near.append(sum(found.counts.get(t, 0) for t in range(48)))
            far.append(sum(found.counts.get(t, 0) for t in range(48, 96)))
        res = stats.ttest_rel(near, far, alternative="greater")
        assert res.pvalue < 0.01


# probe config in the filament-capture regime (see TestRunProbes above)
CAPTURE = dict(sense_distance=0.01, sense_angle=1.5, move_distance=0.001)


class TestMcpmSimilarity:
    def test_two_token_filament_rank_one(self):
        a, b = np.array([0.4, 0.5, 0.5]), np.array([0.6, 0.5, 0.5])
        trace = exp_tube_field((128, 128, 128), [0.2, 0.5, 0.5], [0.8, 0.5, 0.5], 0.005)
        cloud = cloud_from_positions([a, b])
        params = ProbeParams(n_probes=100, n_steps=1500, **CAPTURE)
        ranking = mcpm_similarity(trace, cloud, 0, params, CounterRng(31))
        assert ranking.metric == "mcpm"
        assert ranking.query == 0
        assert ranking.entries and ranking.entries[0][0] == 1

    def test_unknown_query_rejected(self):
        trace = constant_field((16, 16, 16))
        cloud = cloud_from_positions([[0.5, 0.5, 0.5]])
        with pytest.raises(KeyError):
            mcpm_similarity(trace, cloud, 99, quick_params(), CounterRng(1))

    def test_deterministic_ranking(self):
        a, b = np.array([0.3, 0.5, 0.5]), np.array([0.7, 0.5, 0.5])
        trace = tube_field((32, 32, 32), a, b, 0.03)
        rng = np.random.default_rng(8)
        cloud = cloud_from_positions(
            np.concatenate([[a], [b], 0.3 + 0.4 * rng.uniform(size=(20, 3))])
        )
        params = quick_params(n_probes=80, n_steps=200)
        r1 = mcpm_similarity(trace, cloud, 0, params, CounterRng(37), n_repeats=2)
        r2 = mcpm_similarity(trace, cloud, 0, params, CounterRng(37), n_repeats=2)
        assert r1.entries == r2.entries

    def test_on_network_region_outranks_off_network(self):
        # two candidate regions at the same straight-line distance from the
        # seed; only one is joined to it by a trace filament. across 20
        # seeded searches the connected region must win at least 19 times.
        seed_pt = np.array([0.3, 0.5, 0.5])
        trace = exp_tube_field(
            (128, 128, 128), [0.2, 0.5, 0.5], [0.75, 0.5, 0.5], 0.005
        )
        # the on-network group lies along the filament, the off-network group
        # on a ray the trace does not cover, both starting 0.2 from the seed
        a_tokens = [[0.5 + 0.02 * k, 0.5, 0.5] for k in range(5)]
        b_tokens = [[0.3, 0.7 + 0.02 * k, 0.5] for k in range(5)]
        cloud = cloud_from_positions(np.concatenate([[seed_pt], a_tokens, b_tokens]))
        params = ProbeParams(n_probes=100, n_steps=1500, **CAPTURE)

        wins = 0
        for s in range(20):
            ranking = mcpm_similarity(trace, cloud, 0, params, CounterRng(9000 + s))
            ranks = {tid: i + 1 for i, (tid, _) in enumerate(ranking.entries)}
            worst = len(cloud) + 1
            a_med = np.median([ranks.get(t, worst) for t in range(1, 6)])
            b_med = np.median([ranks.get(t, worst) for t in range(6, 11)])
            wins += a_med < b_med
        assert wins >= 19

    def test_repeats_average_scores(self):
        # every repeat must discover at least one token for the averaged
        # normalized scores to keep summing to one
        a, b = np.array([0.4, 0.5, 0.5]), np.array([0.6, 0.5, 0.5])
        trace = exp_tube_field((128, 128, 128), [0.2, 0.5, 0.5], [0.8, 0.5, 0.5], 0.005)
        cloud = cloud_from_positions([a, b, [0.5, 0.503, 0.5]])
        params = ProbeParams(n_probes=60, n_steps=800, **CAPTURE)
        r = mcpm_similarity(trace, cloud, 0, params, CounterRng(41), n_repeats=3)
        assert sum(s for _, s in r.entries) == pytest.approx(1.0, abs=1e-9)


class TestTypes:
    def test_trajectory_validation(self):
        with pytest.raises(ValueError):
            TrajectorySet(np.zeros(2), np.zeros((1, 2, 3)), np.zeros((1, 1, 3)))
        t = make_line_traj(np.array([0.1, 0.1, 0.1]), [1, 0, 0], 5, 0.01)
        t.validate(0.01)
        bad = make_line_traj(np.array([0.1, 0.1, 0.1]), [1, 0, 0], 5, 0.01)
        bad.polylines[0, 3] += 0.05
        with pytest.raises(ValueError):
            bad.validate(0.01)

    def test_discovery_counts_validation(self):
        DiscoveryCounts({1: 3, 2: 1}, {1: 0.75, 2: 0.25})
        with pytest.raises(ValueError):
            DiscoveryCounts({1: 0}, {})
        with pytest.raises(ValueError):
            DiscoveryCounts({1: 3}, {1: 0.5})
        with pytest.raises(ValueError):
            DiscoveryCounts({1: 3}, {2: 1.0})

    def test_ranking_validation(self):
        Ranking(0, "mcpm", [(1, 0.7), (2, 0.3)])
        Ranking(0, "euclidean", [(1, 0.1), (2, 0.4)])
        with pytest.raises(ValueError):
            Ranking(0, "mcpm", [(1, 0.3), (2, 0.7)])
        with pytest.raises(ValueError):
            Ranking(0, "euclidean", [(1, 0.4), (2, 0.1)])
        with pytest.raises(ValueError):
            Ranking(0, "mcpm", [(0, 1.0)])
        with pytest.raises(ValueError):
            Ranking(0, "manhattan", [])

    def test_ranking_rank_of(self):
        r = Ranking(0, "mcpm", [(5, 0.6), (3, 0.4)])
        assert r.rank_of(5) == 1
        assert r.rank_of(3) == 2
        assert r.rank_of(99) is None

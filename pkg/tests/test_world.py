import json
import math
from collections import deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hashnav.geometry import Pose2D
from hashnav.hashing import HashingConfig
from hashnav.world import (
    World, LidarModel, OdometryModel, QrMarker, QrModel, Odometer, raycast_scan, step_motion,
    detect_qr, unicycle_increment, world_to_dict, world_from_dict, save_world, load_world,
    compile_world, reference_world, qr_reference_world, qr_payloads, navigable_edges,
    reference_layout,
)


QUIET = LidarModel(sigma=0.0)


def test_empty_world_scan_is_all_no_return():
    w = World(np.zeros((0, 4)))
    s = raycast_scan(w, Pose2D(5, 5, 0), QUIET, np.random.default_rng(0))
    assert np.isinf(s.ranges).all()


def test_perpendicular_wall_at_two_metres():
    w = World([(3.0, -50, 3.0, 50)])
    s = raycast_scan(w, Pose2D(1.0, 0.0, 0.0), QUIET, np.random.default_rng(0))
    k = int(np.argmin(np.abs(s.bearings())))
    assert s.ranges[k] == pytest.approx(2.0, abs=1e-12)


def test_scan_beyond_max_range_is_no_return():
    w = World([(12.0, -50, 12.0, 50)])
    s = raycast_scan(w, Pose2D(0, 0, 0), QUIET, np.random.default_rng(0))
    assert np.isinf(s.ranges).all()


def test_scan_noise_has_configured_spread():
    w = World([(3.0, -50, 3.0, 50)])
    s = raycast_scan(w, Pose2D(1.0, 0.0, 0.0), LidarModel(sigma=0.01), np.random.default_rng(3))
    b = s.bearings()
    front = np.abs(b) < math.radians(30)
    resid = s.ranges[front] - 2.0 / np.cos(b[front])
    assert abs(resid.std() - 0.01) < 0.002


def test_world_rejects_landmark_outside_bounds():
    from hashnav.map_encoder import LandmarkDescriptor
    with pytest.raises(ValueError):
        World(np.zeros((0, 4)), (10, 10), [LandmarkDescriptor(0, "room", (11, 1, 0), area=1.0)])
    with pytest.raises(ValueError):
        World([(0, 0, np.nan, 1)])


def test_zero_noise_odometry_equals_truth():
    om = OdometryModel(0.0, 0.0, seed=1)
    odo = Odometer(om)
    true, est = Pose2D(0, 0, 0), Pose2D(0, 0, 0)
    for k in range(200):
        cmd = (0.5, 0.3 * math.sin(k / 20))
        res = odo.step(true, cmd, 0.1)
        true = res.pose
        est = est.compose(*res.increment)
    assert est.distance(true) < 1e-9
    assert abs(math.remainder(est.theta - true.theta, 2 * math.pi)) < 1e-9


@pytest.mark.parametrize("c", [0.0, 0.5, 1.0])
def test_per_step_translation_noise_std(c):
    # v = 0.5, dt = 0.1, sigma_t = 0.03 -> 0.0015 m per step, whatever the split
    om = OdometryModel(0.03, 0.0, correlation=c)
    n = 4000
    errs = []
    for seed in range(n):
        rng = np.random.default_rng(seed)
        bias = rng.standard_normal(3)
        res = step_motion(Pose2D(0, 0, 0), (0.5, 0.0), 0.1, om, rng, bias)
        errs.append(res.increment[0] - 0.05)
    assert np.std(errs) == pytest.approx(0.0015, rel=0.05)


def test_odometry_is_deterministic_per_seed():
    def run(seed):
        odo = Odometer(OdometryModel(0.05, 0.05, seed=seed))
        p = Pose2D(0, 0, 0)
        out = []
        for _ in range(50):
            r = odo.step(p, (0.5, 0.2), 0.1)
            p = r.pose
            out.append(r.increment)
        return out
    assert run(7) == run(7)
    assert run(7) != run(8)


def test_systematic_error_accumulates_linearly():
    # fully correlated translation error: drift grows with distance, not its root
    odo = Odometer(OdometryModel(0.03, 0.0, correlation=1.0, seed=2))
    true, est = Pose2D(0, 0, 0), Pose2D(0, 0, 0)
    drift = []
    for k in range(400):
        r = odo.step(true, (0.5, 0.0), 0.1)
        true, est = r.pose, est.compose(*r.increment)
        drift.append(est.distance(true))
    assert drift[399] == pytest.approx(4 * drift[99], rel=1e-6)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1, 1), st.floats(-2, 2), st.floats(0.01, 0.5))
def test_unicycle_increment_matches_fine_integration(v, w, dt):
    x = y = th = 0.0
    n = 2000
    for _ in range(n):
        x += v * math.cos(th) * dt / n
        y += v * math.sin(th) * dt / n
        th += w * dt / n
    dx, dy, dth = unicycle_increment(v, w, dt)
    assert abs(dx - x) < 1e-3 * dt and abs(dy - y) < 1e-3 * dt
    assert dth == pytest.approx(w * dt)


def test_blocked_motion_keeps_robot_off_the_wall():
    w = World([(1.0, -5, 1.0, 5)])
    rng = np.random.default_rng(0)
    p = Pose2D(0.0, 0.0, 0.0)
    blocked = False
    for _ in range(50):
        r = step_motion(p, (0.5, 0.0), 0.1, OdometryModel(0.0, 0.0), rng, world=w)
        p = r.pose
        blocked |= r.blocked
        if r.blocked:
            assert r.increment[0] == 0.0 and r.increment[1] == 0.0
    assert blocked and w.clearance(p.xy) >= 0.175 - 0.05 - 1e-9
    assert p.x < 1.0


def test_rejects_bad_models():
    with pytest.raises(ValueError):
        OdometryModel(-0.1, 0.0)
    with pytest.raises(ValueError):
        OdometryModel(0.1, 0.0, correlation=1.5)
    with pytest.raises(ValueError):
        step_motion(Pose2D(0, 0, 0), (0.1, 0), 0.0, OdometryModel(), np.random.default_rng(0))


def _qr_world(x, y, facing):
    return World(np.zeros((0, 4)), (20, 20), [], [QrMarker(x, y, facing, 0)])


def test_qr_behind_robot_not_detected():
    w = _qr_world(3.0, 5.0, 0.0)
    assert detect_qr(w, Pose2D(5, 5, 0), QrModel(), np.random.default_rng(0), [b"x"]) == []


def test_qr_ahead_and_facing_is_detected():
    w = _qr_world(7.0, 5.0, math.pi)
    qm = QrModel(range_sigma=0.0, bearing_sigma=0.0, facing_sigma=0.0)
    (d,) = detect_qr(w, Pose2D(5, 5, 0), qm, np.random.default_rng(0), [b"x"])
    assert d.payload == b"x"
    assert d.range == pytest.approx(2.0) and d.bearing == pytest.approx(0.0)
    assert math.remainder(d.facing - math.pi, 2 * math.pi) == pytest.approx(0.0)


def test_qr_out_of_range_or_turned_away_not_detected():
    qm = QrModel()
    rng = np.random.default_rng(0)
    assert detect_qr(_qr_world(8.2, 5.0, math.pi), Pose2D(5, 5, 0), qm, rng, [b"x"]) == []
    assert detect_qr(_qr_world(7.0, 5.0, 0.0), Pose2D(5, 5, 0), qm, rng, [b"x"]) == []


def test_qr_hidden_behind_wall():
    w = World([(6.0, 0, 6.0, 10)], (20, 20), [], [QrMarker(7.0, 5.0, math.pi, 0)])
    assert detect_qr(w, Pose2D(5, 5, 0), QrModel(), np.random.default_rng(0), [b"x"]) == []


def test_world_json_round_trip(tmp_path):
    w = reference_world()
    p = tmp_path / "w.json"
    save_world(w, p)
    back = load_world(p)
    assert json.dumps(world_to_dict(back), sort_keys=True) == \
        json.dumps(world_to_dict(w), sort_keys=True)
    q = qr_reference_world()
    assert world_to_dict(world_from_dict(world_to_dict(q))) == world_to_dict(q)


def test_world_file_errors():
    with pytest.raises(ValueError):
        world_from_dict([1, 2])
    with pytest.raises(ValueError):
        world_from_dict({"landmarks": [{"position": [1, 1, 0]}]})


def _reachable(edges, start):
    adj = {}
    for a, b in edges:
        adj.setdefault(a, []).append(b)
    seen, todo = {start}, deque([start])
    while todo:
        for j in adj.get(todo.popleft(), []):
            if j not in seen:
                seen.add(j)
                todo.append(j)
    return seen


def test_reference_world_shape():
    w = reference_world()
    kinds = [lm.kind for lm in w.landmarks]
    assert (kinds.count("doorway"), kinds.count("room"), kinds.count("corner")) == (16, 9, 2)
    assert _reachable(w.edges, w.start_node) == set(range(len(w.landmarks)))
    # usable both ways
    assert all((b, a) in set(w.edges) for a, b in w.edges)
    # landmarks clear of each other's digests
    g = compile_world(w, HashingConfig())
    assert len(set(g.node_digests)) == len(w.landmarks)


def test_edges_have_distinct_bins_per_source():
    from hashnav.hashing import quantize_angle
    w = reference_world()
    seen = set()
    for a, b in w.edges:
        pa, pb = w.landmarks[a].xy, w.landmarks[b].xy
        k = quantize_angle(math.atan2(pb[1] - pa[1], pb[0] - pa[0]), 16)
        assert (a, k) not in seen
        seen.add((a, k))


def test_navigable_edges_skip_walled_pairs():
    walls, lms = reference_layout()
    edges = set(navigable_edges(walls, lms, HashingConfig()))
    # the main door and a room on the far side of the building
    assert (0, 17) not in edges and (0, 19) in edges


def test_qr_world_payloads_are_node_digests():
    w = qr_reference_world()
    cfg = HashingConfig(delta=0.02)
    g = compile_world(w, cfg)
    assert qr_payloads(w, cfg) == list(g.node_digests)
    assert _reachable(w.edges, 0) == set(range(8))

"""Oracle suites shared by the test suite and ``hashnav verify``.

Each suite is seeded and returns plain numbers, so a caller decides what
counts as passing.
"""
from __future__ import annotations

import math

import numpy as np

from . import hashing as H
from . import features as F
from .features import Observation
from .geometry import Pose2D
from .hashing import HashingConfig
from .localizer import SearchBudget, match_observation, spiral_offsets, spiral_rank
from .map_encoder import LandmarkDescriptor, build_nav_graph
from .world import LidarModel, raycast_scan, reference_world

SPIRAL_DELTAS = (0.4, 0.2, 0.1, 0.05, 0.025)
KINDS = ("doorway", "corner", "room", "qr")


def spiral_counts(R=0.5, deltas=SPIRAL_DELTAS):
    return {d: len(spiral_offsets(R, d)) for d in deltas}


def brute_force_match(obs, est_pose, g, R):
    """Exhaustive search over the whole square window, then pick the match in
    the smallest Chebyshev ring, ties broken by clockwise angle from +x.

    Returns (node, offset) or None.
    """
    cfg = g.cfg
    c, s = math.cos(est_pose.theta), math.sin(est_pose.theta)
    gx = est_pose.x + c * obs.position[0] - s * obs.position[1]
    gy = est_pose.y + s * obs.position[0] + c * obs.position[1]
    orient = None if obs.orientation is None else obs.orientation + est_pose.theta
    if obs.kind == "doorway":
        extra = H.quantize_angle(orient, cfg.angle_bins) % (cfg.angle_bins // 2)
    elif obs.kind == "corner":
        extra = H.quantize_angle(orient, cfg.angle_bins)
    elif obs.kind == "room":
        extra = H.quantize_scalar(obs.area, cfg.area_quantum)
    elif obs.kind == "qr" and orient is not None:
        extra = H.quantize_angle(orient, cfg.angle_bins)
    else:
        extra = None
    n = int(math.floor(R / cfg.delta + 1e-9))
    qx0, qy0 = H.quantize_scalar(gx, cfg.delta), H.quantize_scalar(gy, cfg.delta)
    nodes = {d: i for i, d in enumerate(g.node_digests)}
    hits = []
    for dx in range(-n, n + 1):
        for dy in range(-n, n + 1):
            fields = [obs.kind, str(qx0 + dx), str(qy0 + dy), "0"]
            if extra is not None:
                fields.append(str(extra))
            d = H.hash256("|".join(fields).encode())
            if d in nodes:
                hits.append((spiral_rank(dx, dy), nodes[d], (dx, dy)))
    if not hits:
        return None
    hits.sort()
    return hits[0][1], hits[0][2]


def grid_landmarks(rng, n_side=5, spacing=3.0, cfg=HashingConfig()):
    """n_side^2 landmarks of mixed kinds on a jittered lattice; orientations
    and areas sit at bin centres so small noise never changes the extra."""
    k = cfg.angle_bins
    lms = []
    for i in range(n_side * n_side):
        x = 2.0 + spacing * (i % n_side) + rng.uniform(-0.3, 0.3)
        y = 2.0 + spacing * (i // n_side) + rng.uniform(-0.3, 0.3)
        kind = KINDS[int(rng.integers(0, 3))]
        orient = area = None
        if kind in ("doorway", "corner"):
            orient = H.bin_center(int(rng.integers(0, k)), k)
        else:
            area = (int(rng.integers(20, 200)) + 0.5) * cfg.area_quantum
        lms.append(LandmarkDescriptor(i, kind, (x, y, 0.0), orientation=orient, area=area))
    return lms


def _observe(lm, pose, kind=None, orientation=None, area=None, shift=(0.0, 0.0)):
    p = (lm.xy[0] + shift[0], lm.xy[1] + shift[1])
    o = lm.orientation if orientation is None else orientation
    return Observation(kind or lm.kind, np.array(pose.to_local(p)),
                       orientation=None if o is None else o - pose.theta,
                       area=lm.area if area is None else area)


def oracle_equivalence(n=1000, seed=0, R=0.5, delta=0.1):
    """Spiral search against the exhaustive oracle on random instances.

    Errors reach past the window so both found and not-found cases occur.
    Returns (agreements, instances, matched instances).
    """
    rng = np.random.default_rng(seed)
    cfg = HashingConfig(delta=delta)
    agree = found = 0
    for trial in range(n):
        if trial % 100 == 0:
            lms = grid_landmarks(rng, cfg=cfg)
            g = build_nav_graph(lms, [], cfg)
        lm = lms[int(rng.integers(0, len(lms)))]
        true = Pose2D(lm.xy[0] + rng.uniform(-3, 3), lm.xy[1] + rng.uniform(-3, 3),
                      rng.uniform(-math.pi, math.pi))
        ex, ey = rng.uniform(-1.5 * R, 1.5 * R, 2)
        est = Pose2D(true.x + ex, true.y + ey, true.theta + rng.uniform(-0.05, 0.05))
        obs = _observe(lm, true)
        m = match_observation(obs, est, g, SearchBudget(R, delta))
        want = brute_force_match(obs, est, g, R)
        got = None if m is None else (m.node, m.offset)
        agree += got == want
        found += want is not None
    return agree, n, found


def _perturb(rng, lm, cfg, R):
    """One observation of ``lm`` that no landmark of the graph explains."""
    k = cfg.angle_bins
    which = int(rng.integers(0, 4))
    if which == 0:
        others = [t for t in KINDS if t != lm.kind]
        kind = others[int(rng.integers(0, len(others)))]
        o = lm.orientation if lm.orientation is not None else H.bin_center(int(rng.integers(0, k)), k)
        a = lm.area if lm.area is not None else (int(rng.integers(20, 200)) + 0.5) * cfg.area_quantum
        return "kind", dict(kind=kind, orientation=o, area=a)
    if which == 1:
        # outside the window in Chebyshev distance, well short of neighbours
        r = R + 2 * cfg.delta + rng.uniform(0, 0.6)
        side = int(rng.integers(0, 4))
        u = rng.uniform(-r, r)
        shift = [(r, u), (-r, u), (u, r), (u, -r)][side]
        return "cell", dict(shift=shift)
    if which == 2 and lm.orientation is not None:
        span = k // 2 if lm.kind == "doorway" else k
        step = int(rng.integers(1, span))
        return "orientation", dict(orientation=lm.orientation + step * 2 * math.pi / k)
    if lm.area is not None:
        step = int(rng.choice([-3, -2, -1, 1, 2, 3]))
        return "area", dict(area=lm.area + step * cfg.area_quantum)
    return _perturb(rng, lm, cfg, R)


def soundness_fuzz(n=100_000, seed=0, R=0.5, delta=0.1):
    """Perturbed observations against a 25-node graph.

    Apart from a shifted cell, the estimate is off by less than the window,
    so only the perturbed field stands between the search and a match.
    Returns (false matches, trials, per-perturbation counts).
    """
    rng = np.random.default_rng(seed)
    cfg = HashingConfig(delta=delta)
    lms = grid_landmarks(rng, cfg=cfg)
    g = build_nav_graph(lms, [], cfg)
    budget = SearchBudget(R, delta)
    false = 0
    counts = {}
    for _ in range(n):
        lm = lms[int(rng.integers(0, len(lms)))]
        label, kw = _perturb(rng, lm, cfg, R)
        counts[label] = counts.get(label, 0) + 1
        true = Pose2D(lm.xy[0] + rng.uniform(-2, 2), lm.xy[1] + rng.uniform(-2, 2),
                      rng.uniform(-math.pi, math.pi))
        ex, ey = rng.uniform(-(R - delta), R - delta, 2)
        if label == "cell":
            # any estimate error could carry the shifted point back into range
            ex = ey = 0.0
        est = Pose2D(true.x + ex, true.y + ey, true.theta)
        if match_observation(_observe(lm, true, **kw), est, g, budget) is not None:
            false += 1
    return false, n, counts


def avalanche(n=1000, seed=0, cfg=HashingConfig()):
    """Bit difference between digests of preimages one field apart (+-1).

    Returns (mean fraction, min fraction) over ``n`` preimages.
    """
    rng = np.random.default_rng(seed)
    fracs = []
    for _ in range(n):
        kind = KINDS[int(rng.integers(0, 4))]
        fields = [int(v) for v in rng.integers(-2000, 2000, 3)]
        fields[2] = int(rng.integers(-3, 4))
        if kind != "qr" or rng.random() < 0.5:
            fields.append(int(rng.integers(0, cfg.angle_bins)))
        i = int(rng.integers(0, len(fields)))
        flipped = list(fields)
        flipped[i] += int(rng.choice([-1, 1]))
        a = np.frombuffer(H.hash256(H.join_fields(kind, *fields)), dtype=np.uint8)
        b = np.frombuffer(H.hash256(H.join_fields(kind, *flipped)), dtype=np.uint8)
        fracs.append(np.unpackbits(a ^ b).sum() / 256.0)
    return float(np.mean(fracs)), float(np.min(fracs))


def reference_scans(n=20, seed=0):
    """Scans along the reference building's corridors with their true poses."""
    w = reference_world()
    rng = np.random.default_rng(seed)
    lm = LidarModel()
    out = []
    while len(out) < n:
        p = Pose2D(rng.uniform(18.5, 21.5), rng.uniform(2, 38), rng.uniform(-math.pi, math.pi))
        if rng.random() < 0.5:
            p = Pose2D(p.y, p.x, p.theta)
        if w.clearance(p.xy) > 0.4:
            out.append((p, raycast_scan(w, p, lm, rng)))
    return w, out


def observation_errors(n_scans=400, seed=5, gate=0.5):
    """Pose error each observation implies on its own, per kind.

    Observations are associated with the nearest true landmark of their
    kind, the heading is reset from the landmark's exact orientation and
    the position is taken from its exact location, so grid quantization
    plays no part; what remains is the sensing and extraction error.
    """
    w, frames = reference_scans(n_scans, seed)
    out = {}
    for pose, scan in frames:
        for o in F.observe(scan)[1]:
            gp = pose.to_global(o.position)
            near = [(math.dist(gp, lm.xy), lm.id) for lm in w.landmarks
                    if lm.kind == o.kind and math.dist(gp, lm.xy) < gate]
            if not near:
                continue
            lm = w.landmarks[min(near)[1]]
            th = pose.theta
            if o.orientation is not None and lm.orientation is not None:
                period = math.pi if o.kind == "doorway" else 2 * math.pi
                th += math.remainder(lm.orientation - (o.orientation + th), period)
            c, s = math.cos(th), math.sin(th)
            px = lm.xy[0] - (c * o.position[0] - s * o.position[1])
            py = lm.xy[1] - (s * o.position[0] + c * o.position[1])
            out.setdefault(o.kind, []).append(math.hypot(px - pose.x, py - pose.y))
    return out


def observation_sigma(n_scans=400, seed=5):
    """RMS of :func:`observation_errors` over all kinds."""
    e = np.concatenate([np.asarray(v) for v in observation_errors(n_scans, seed).values()])
    return float(np.sqrt(np.mean(e ** 2)))


def run_all(scale=1.0, seed=0):
    """(name, passed, detail) for each suite; ``scale`` shrinks the counts."""
    out = []
    counts = spiral_counts()
    want = [9, 25, 121, 441, 1681]
    out.append(("spiral counts", list(counts.values()) == want,
                " ".join(f"{d}:{c}" for d, c in counts.items())))
    agree, n, found = oracle_equivalence(max(1, int(1000 * scale)), seed)
    out.append(("oracle equivalence", agree == n, f"{agree}/{n} agree, {found} with a match"))
    false, n, _ = soundness_fuzz(max(1, int(100_000 * scale)), seed)
    out.append(("soundness fuzz", false == 0, f"{false} false matches in {n}"))
    mean, lo = avalanche(max(1, int(1000 * scale)), seed)
    out.append(("avalanche", mean >= 0.40 and lo >= 0.25, f"mean {mean:.3f} min {lo:.3f}"))
    return out

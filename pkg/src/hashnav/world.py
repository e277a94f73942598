"""Deterministic 2D world: walls, lidar, wheel odometry and QR markers.

Nothing in here is visible to robot-side code except through the values
returned by :func:`raycast_scan`, :func:`step_motion` and :func:`detect_qr`.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .features import SAMPLES, STEP, BEARING_MIN, ScanFrame
from .geometry import Pose2D
from .hashing import HashingConfig, quantize_angle, bin_center
from .map_encoder import LandmarkDescriptor, build_nav_graph, encode_node

ROBOT_RADIUS = 0.175


@dataclass
class QrMarker:
    x: float
    y: float
    facing: float
    node: int


@dataclass
class World:
    walls: np.ndarray
    bounds: tuple = (40.0, 40.0)
    landmarks: list = field(default_factory=list)
    qr_markers: list = field(default_factory=list)
    edges: list = field(default_factory=list)
    start_node: int = 0
    start_pose: Pose2D = Pose2D(1.0, 1.0, 0.0)

    def __post_init__(self):
        self.walls = np.asarray(self.walls, dtype=np.float64).reshape(-1, 4)
        if not np.isfinite(self.walls).all():
            raise ValueError("wall coordinates must be finite")
        w, h = self.bounds
        for lm in self.landmarks:
            x, y = lm.xy
            if not (0 <= x <= w and 0 <= y <= h):
                raise ValueError(f"landmark {lm.id} outside bounds")

    def clearance(self, p):
        return kernels.clearance(p, self.walls)

    def inside(self, p):
        return 0 <= p[0] <= self.bounds[0] and 0 <= p[1] <= self.bounds[1]


# -- sensors & motion -------------------------------------------------------

@dataclass(frozen=True)
class LidarModel:
    fov: float = math.radians(270.0)
    samples: int = SAMPLES
    rate: float = 1.0
    max_range: float = 10.0
    sigma: float = 0.01


def raycast_scan(world: World, pose: Pose2D, lm: LidarModel, rng, t=0.0) -> ScanFrame:
    angles = pose.theta + BEARING_MIN + STEP * np.arange(SAMPLES)
    r = kernels.raycast(pose.xy, angles, world.walls, lm.max_range)
    if lm.sigma > 0:
        # one draw per beam, hit or not, so the stream never depends on geometry
        noise = rng.normal(0.0, lm.sigma, SAMPLES)
        r = r + noise
    r[~(r <= lm.max_range)] = np.inf
    r[r <= 0] = 1e-3
    return ScanFrame(t, r, max_range=lm.max_range)


@dataclass(frozen=True)
class OdometryModel:
    """Wheel odometry error model.

    Each control step perturbs the robot-frame increment by Gaussian noise
    with std ``sigma_t * |v| * dt`` on both translation axes and
    ``sigma_r * |w| * dt`` on heading. ``correlation`` (translation) and
    ``heading_correlation`` split that noise between a per-run systematic
    part (drawn once, like a miscalibrated wheel radius, so it scales with
    the signed command) and a fresh per-step part; the per-step std is the
    same for any value.
    """

    sigma_t: float = 0.03
    sigma_r: float = 0.05
    correlation: float = 1.0
    heading_correlation: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma_t < 0 or self.sigma_r < 0:
            raise ValueError("odometry sigmas must be >= 0")
        for c in (self.correlation, self.heading_correlation):
            if not 0.0 <= c <= 1.0:
                raise ValueError("correlations must be in [0, 1]")


class MotionResult(NamedTuple):
    pose: Pose2D
    increment: tuple
    blocked: bool


def unicycle_increment(v, w, dt):
    """Exact robot-frame displacement of a unicycle over ``dt``."""
    if abs(w) < 1e-9:
        return v * dt, 0.0, w * dt
    return v / w * math.sin(w * dt), v / w * (1.0 - math.cos(w * dt)), w * dt


def step_motion(true_pose: Pose2D, cmd, dt, om: OdometryModel, rng, bias=None,
                world: World | None = None, radius=ROBOT_RADIUS) -> MotionResult:
    """Integrate one control step; return the new true pose and what odometry reports.

    With a ``world``, a step that would bring the robot closer than ``radius``
    to a wall keeps its rotation but drops its translation.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    v, w = cmd
    dx, dy, dth = unicycle_increment(v, w, dt)
    new = true_pose.compose(dx, dy, dth)
    blocked = False
    if world is not None and (dx or dy):
        c_new = world.clearance(new.xy)
        if c_new < radius and c_new < world.clearance(true_pose.xy):
            blocked = True
            new = Pose2D(true_pose.x, true_pose.y, true_pose.theta + dth)
            dx = dy = 0.0
            v = 0.0
    z = rng.standard_normal(3)
    if bias is not None:
        c = np.array([om.correlation, om.correlation, om.heading_correlation])
        z = c * np.asarray(bias) + np.sqrt(1.0 - c ** 2) * z
    st = om.sigma_t * v * dt
    sr = om.sigma_r * w * dt
    inc = (dx + st * z[0], dy + st * z[1], dth + sr * z[2])
    return MotionResult(new, inc, blocked)


class Odometer:
    """Stateful wrapper owning the rng stream and the systematic error draw."""

    def __init__(self, model: OdometryModel):
        self.model = model
        self.rng = np.random.default_rng(model.seed)
        self.bias = self.rng.standard_normal(3)

    def step(self, pose, cmd, dt, world=None):
        return step_motion(pose, cmd, dt, self.model, self.rng, self.bias, world)


@dataclass(frozen=True)
class QrModel:
    fov: float = math.radians(60.0)
    detect_range: float = 3.0
    side: float = 0.12
    max_incidence: float = math.radians(60.0)
    range_sigma: float = 0.02      # fraction of range
    bearing_sigma: float = math.radians(0.5)
    facing_sigma: float = math.radians(2.0)


class QrDetection(NamedTuple):
    payload: bytes
    range: float
    bearing: float
    # marker normal in the robot frame, from the marker's perspective distortion
    facing: float


def detect_qr(world: World, pose: Pose2D, qm: QrModel, rng, payloads) -> list:
    """Markers in the camera cone, facing the robot and in line of sight.

    ``payloads[i]`` is the digest printed on marker ``i``.
    """
    out = []
    for k, m in enumerate(world.qr_markers):
        dx, dy = m.x - pose.x, m.y - pose.y
        rng_ = math.hypot(dx, dy)
        bearing = math.remainder(math.atan2(dy, dx) - pose.theta, 2 * math.pi)
        if not (1e-6 < rng_ <= qm.detect_range) or abs(bearing) > qm.fov / 2:
            continue
        back = math.atan2(-dy, -dx)
        if abs(math.remainder(back - m.facing, 2 * math.pi)) >= qm.max_incidence:
            continue
        hit = kernels.raycast(pose.xy, np.array([math.atan2(dy, dx)]), world.walls, rng_ + 1.0)[0]
        if hit < rng_ - 0.05:
            continue
        r = rng_ * (1.0 + qm.range_sigma * rng.standard_normal())
        b = bearing + qm.bearing_sigma * rng.standard_normal()
        f = m.facing - pose.theta + qm.facing_sigma * rng.standard_normal()
        out.append(QrDetection(payloads[k], r, b, f))
    return out


# -- world files ------------------------------------------------------------

def world_to_dict(w: World) -> dict:
    lms = []
    for lm in w.landmarks:
        d = {"kind": lm.kind, "position": list(lm.position)}
        if lm.orientation is not None:
            d["orientation"] = lm.orientation
        if lm.area is not None:
            d["area"] = lm.area
        lms.append(d)
    return {
        "bounds": list(w.bounds),
        "walls": w.walls.tolist(),
        "landmarks": lms,
        "qr": [{"pose": [m.x, m.y, m.facing], "node": m.node} for m in w.qr_markers],
        "edges": [list(e) for e in w.edges],
        "start": {"node": w.start_node,
                  "pose": [w.start_pose.x, w.start_pose.y, w.start_pose.theta]},
    }


def save_world(w: World, path):
    with open(path, "w") as fh:
        json.dump(world_to_dict(w), fh, indent=1)
        fh.write("\n")


def world_from_dict(obj) -> World:
    if not isinstance(obj, dict):
        raise ValueError("world file must hold a JSON object")
    try:
        lms = [LandmarkDescriptor(i, d["kind"], tuple(d["position"]),
                                  orientation=d.get("orientation"), area=d.get("area"))
               for i, d in enumerate(obj.get("landmarks", []))]
        qr = [QrMarker(q["pose"][0], q["pose"][1], q["pose"][2], int(q["node"]))
              for q in obj.get("qr", [])]
        start = obj.get("start", {})
        pose = start.get("pose")
        if pose is None:
            pose = list(lms[start.get("node", 0)].xy) + [0.0] if lms else [1.0, 1.0, 0.0]
        return World(
            walls=np.asarray(obj.get("walls", []), dtype=np.float64).reshape(-1, 4),
            bounds=tuple(obj.get("bounds", (40.0, 40.0))),
            landmarks=lms,
            qr_markers=qr,
            edges=[tuple(e) for e in obj.get("edges", [])],
            start_node=int(start.get("node", 0)),
            start_pose=Pose2D(*pose),
        )
    except (KeyError, TypeError, IndexError) as exc:
        raise ValueError(f"malformed world file: {exc!r}") from None


def load_world(path) -> World:
    with open(path) as fh:
        return world_from_dict(json.load(fh))


def compile_world(w: World, cfg: HashingConfig, edges=None):
    """Encoded graph for the world's landmarks (default: the world's edge list)."""
    return build_nav_graph(w.landmarks, w.edges if edges is None else edges, cfg,
                           start=w.start_node,
                           start_position=(w.start_pose.x, w.start_pose.y, 0.0))


def qr_payloads(w: World, cfg: HashingConfig):
    return [encode_node(w.landmarks[m.node], cfg) for m in w.qr_markers]


# -- reference floorplan ----------------------------------------------------

ROOM = 9.0
DOOR = 1.6
CORRIDOR = (18.0, 22.0)

# room origin -> door side; sides S, E, N, W
_ROOMS = {
    (0.0, 9.0): "N", (9.0, 9.0): "E", (22.0, 9.0): "W", (31.0, 9.0): "N",
    (0.0, 22.0): "S", (9.0, 22.0): "E", (22.0, 22.0): "W", (31.0, 22.0): "S",
    (15.5, 31.0): "S",
}
_SIDE_ORDER = "SENW"
_CORNER_OUTWARD = {"SW": 225.0, "SE": 315.0, "NE": 45.0, "NW": 135.0}
# protruding room corners at the corridor crossing used as landmarks
_CORNER_LANDMARKS = ((22.0, 22.0, "SW"), (9.0, 9.0, "NE"))
# corridor gates: (centre, gate line along x?); four around the crossing,
# one in each horizontal arm
_GATES = (((20.0, 16.0), True), ((16.0, 20.0), False), ((24.0, 20.0), False),
          ((20.0, 24.0), True), ((9.0, 20.0), False), ((31.0, 20.0), False))
MAIN_DOOR = (20.0, 0.0)


def _room_corners(x0, y0):
    return {"SW": (x0, y0), "SE": (x0 + ROOM, y0),
            "NE": (x0 + ROOM, y0 + ROOM), "NW": (x0, y0 + ROOM)}


def _wall_with_gap(a, b, centre, width=DOOR):
    """Wall a-b with a centred opening of ``width`` around ``centre``."""
    L = math.dist(a, b)
    ux, uy = (b[0] - a[0]) / L, (b[1] - a[1]) / L
    h = width / 2
    return [(*a, centre[0] - ux * h, centre[1] - uy * h),
            (centre[0] + ux * h, centre[1] + uy * h, *b)]


def _door_centre(x0, y0, side):
    return {"S": (x0 + ROOM / 2, y0), "N": (x0 + ROOM / 2, y0 + ROOM),
            "E": (x0 + ROOM, y0 + ROOM / 2), "W": (x0, y0 + ROOM / 2)}[side]


def _room_walls(x0, y0, door_side):
    c = _room_corners(x0, y0)
    sides = {"S": (c["SW"], c["SE"]), "E": (c["SE"], c["NE"]),
             "N": (c["NE"], c["NW"]), "W": (c["NW"], c["SW"])}
    walls = []
    for s, (a, b) in sides.items():
        if s == door_side:
            walls.extend(_wall_with_gap(a, b, _door_centre(x0, y0, s)))
        else:
            walls.append((*a, *b))
    return walls


def _room_triple(x0, y0, door_side):
    """Three inside corners spanning the two walls before the door (CCW)."""
    c = _room_corners(x0, y0)
    names = ["SW", "SE", "NE", "NW"]
    start = (_SIDE_ORDER.index(door_side) + 2) % 4
    return [c[names[(start + i) % 4]] for i in range(3)]


def reference_layout():
    """Walls and annotated ground-truth landmarks of the 40 x 40 m building.

    A plus-shaped pair of 4 m corridors with nine 9 x 9 m rooms, each with a
    single 1.6 m door, six gates splitting the corridors into separate
    spaces, and a main door at the bottom. Landmarks: 16 doorways (main
    door, room doors, gates), 9 rooms and 2 corners; 27 in total.
    """
    W = 40.0
    lo, hi = CORRIDOR
    walls = [(W, 0, W, W), (W, W, 0, W), (0, W, 0, 0)]
    walls += _wall_with_gap((0, 0), (W, 0), MAIN_DOOR)
    # closed voids below and above the side rooms
    walls += [(lo, 0, lo, 9), (hi, 0, hi, 9), (0, 31, 15.5, 31), (24.5, 31, W, 31)]
    raw = [("doorway", MAIN_DOOR, 0.0, None)]
    for (x0, y0), side in _ROOMS.items():
        walls.extend(_room_walls(x0, y0, side))
        tri = _room_triple(x0, y0, side)
        cen = (sum(p[0] for p in tri) / 3, sum(p[1] for p in tri) / 3)
        raw.append(("room", cen, None, ROOM * ROOM / 2))
        raw.append(("doorway", _door_centre(x0, y0, side),
                    0.0 if side in "SN" else math.pi / 2, None))
    for (x, y), along_x in _GATES:
        if along_x:
            walls.extend(_wall_with_gap((lo, y), (hi, y), (x, y)))
        else:
            walls.extend(_wall_with_gap((x, lo), (x, hi), (x, y)))
        raw.append(("doorway", (x, y), 0.0 if along_x else math.pi / 2, None))
    for x0, y0, name in _CORNER_LANDMARKS:
        p = _room_corners(x0, y0)[name]
        raw.append(("corner", p, math.radians(_CORNER_OUTWARD[name]), None))
    lms = [LandmarkDescriptor(i, k, (p[0], p[1], 0.0), orientation=o, area=a)
           for i, (k, p, o, a) in enumerate(raw)]
    return np.array(walls, dtype=np.float64), lms


def _segment_clear(walls, a, b, margin, relax_a, relax_b, length=None):
    """Sampled clearance test of the segment a->b, optionally cut at ``length``.

    ``relax_*`` loosen the test near an endpoint: ("corner", r) lets the
    clearance grow from zero at half the distance to the corner within
    ``r``; ("doorway", r) accepts ``DOOR_CLEARANCE`` between the jambs.
    """
    L = math.hypot(b[0] - a[0], b[1] - a[1])
    stop = L if length is None else min(length, L)
    n = max(2, int(stop / 0.02))
    ux, uy = (b[0] - a[0]) / L, (b[1] - a[1]) / L
    for k in range(n + 1):
        s = stop * k / n
        need = margin
        for (kind, r), dist in ((relax_a, s), (relax_b, L - s)):
            if dist >= r:
                continue
            if kind == "corner":
                need = min(need, 0.5 * dist)
            elif kind == "doorway":
                need = min(need, DOOR_CLEARANCE)
        if kernels.clearance((a[0] + ux * s, a[1] + uy * s), walls) < need:
            return False
    return True


DOOR_CLEARANCE = 0.2
# the robot sees its target well before this far out and heads straight for it
LINE_LOOKAHEAD_SLACK = 2.0
# a corner can be missed at a grazing view, so its bearing line must stay
# clear almost all the way in
CORNER_LOOKAHEAD_SLACK = 0.5


def _in_wedge(lm, p, half=math.radians(40.0)):
    """A protruding corner reads as a corner only from inside its wedge."""
    if lm.kind != "corner":
        return True
    d = math.atan2(p[1] - lm.xy[1], p[0] - lm.xy[0])
    return abs(math.remainder(d - lm.orientation, 2 * math.pi)) <= half


def navigable_edges(walls, landmarks, cfg: HashingConfig, max_len=16.5, margin=0.25):
    """Ordered pairs a robot can drive between in a straight line.

    The true segment must keep ``margin`` from every wall (relaxed next to
    corner and doorway endpoints), and so must the ray along the quantized
    bearing up to where the target is in plain view. Two targets in the same
    bearing bin would share an edge digest, so only the nearer is kept.
    Only pairs usable in both directions are returned.
    """
    relax = {lm.id: (lm.kind, 0.9) for lm in landmarks}
    best = {}
    for a in landmarks:
        for b in landmarks:
            if a.id == b.id:
                continue
            ax, ay = a.xy
            bx, by = b.xy
            L = math.hypot(bx - ax, by - ay)
            if L > max_len:
                continue
            if not (_in_wedge(a, (bx, by)) and _in_wedge(b, (ax, ay))):
                continue
            if not _segment_clear(walls, (ax, ay), (bx, by), margin, relax[a.id], relax[b.id]):
                continue
            k = quantize_angle(math.atan2(by - ay, bx - ax), cfg.angle_bins)
            if (a.id, k) in best and best[a.id, k][0] <= L:
                continue
            th = bin_center(k, cfg.angle_bins)
            tip = (ax + L * math.cos(th), ay + L * math.sin(th))
            clear_to = L - (CORNER_LOOKAHEAD_SLACK if b.kind == "corner" else LINE_LOOKAHEAD_SLACK)
            if not _segment_clear(walls, (ax, ay), tip, margin, relax[a.id], ("none", 0.0),
                                  length=clear_to):
                continue
            # from where the line is abandoned, the target must be in view
            s = max(0.0, L - LINE_LOOKAHEAD_SLACK)
            p = (ax + s * math.cos(th), ay + s * math.sin(th))
            if s > 0 and math.dist(p, (bx, by)) > 0.3 and not (
                    _in_wedge(b, p) and _segment_clear(walls, p, (bx, by), margin,
                                                       ("none", 0.0), relax[b.id])):
                continue
            best[a.id, k] = (L, b.id)
    out = [(a, b) for (a, _), (_, b) in best.items()]
    both = set(out)
    return sorted(e for e in out if (e[1], e[0]) in both)


def reference_world(cfg: HashingConfig | None = None) -> World:
    cfg = cfg or HashingConfig()
    walls, lms = reference_layout()
    edges = navigable_edges(walls, lms, cfg)
    # start just inside the main door (node 0), facing up the entrance
    # corridor; the first landmarks ahead are some 10 m away
    return World(walls, (40.0, 40.0), lms, [], edges, start_node=0,
                 start_pose=Pose2D(20.0, 1.5, math.pi / 2))


def qr_reference_world() -> World:
    """A 12 x 12 m hall with eight QR markers on posts around a 6 m loop.

    Markers are 3 m apart, within camera range of each other, and each
    faces the marker before it, so a robot touring the loop sees the next
    one head-on.
    """
    W = 12.0
    walls = np.array([(0, 0, W, 0), (W, 0, W, W), (W, W, 0, W), (0, W, 0, 0)], dtype=np.float64)
    loop = [(3.0, 3.0), (6.0, 3.0), (9.0, 3.0), (9.0, 6.0),
            (9.0, 9.0), (6.0, 9.0), (3.0, 9.0), (3.0, 6.0)]
    n = len(loop)
    lms, markers = [], []
    for i, (x, y) in enumerate(loop):
        px, py = loop[i - 1]
        facing = math.atan2(py - y, px - x) % (2 * math.pi)
        lms.append(LandmarkDescriptor(i, "qr", (x, y, 0.0), orientation=facing))
        markers.append(QrMarker(x, y, facing, i))
    edges = [(i, (i + 1) % n) for i in range(n)]
    # start 2 m before the first marker, facing it
    return World(walls, (W, W), lms, markers, edges, start_node=0,
                 start_pose=Pose2D(3.0, 5.0, -math.pi / 2))

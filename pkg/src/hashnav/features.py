"""Lidar scan -> line segments -> feature points -> landmark observations.

Everything here is in the robot frame: x forward, y left, bearings counter-
clockwise. Segments come out ordered by increasing scan bearing, and so do
the feature points built from them.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

SAMPLES = 1080
STEP = math.radians(0.25)
BEARING_MIN = -math.radians(135.0)


@dataclass
class ScanFrame:
    """One 270 degree sweep; ``inf`` marks a beam with no return."""

    timestamp: float
    ranges: np.ndarray
    max_range: float = 10.0
    bearing_min: float = BEARING_MIN
    step: float = STEP

    def __post_init__(self):
        self.ranges = np.asarray(self.ranges, dtype=np.float64)
        if self.ranges.shape != (SAMPLES,):
            raise ValueError(f"scan must have {SAMPLES} samples, got {self.ranges.shape}")
        bad = np.isfinite(self.ranges) & ~((self.ranges > 0) & (self.ranges <= self.max_range))
        if bad.any():
            raise ValueError("ranges must lie in (0, max_range] or be inf")

    @property
    def bearing_max(self):
        return self.bearing_min + (SAMPLES - 1) * self.step

    def bearings(self):
        return self.bearing_min + self.step * np.arange(SAMPLES)

    def points(self):
        """(N, 2) Cartesian points; rows for no-return beams are nan."""
        b = self.bearings()
        r = np.where(np.isfinite(self.ranges), self.ranges, np.nan)
        return np.column_stack((r * np.cos(b), r * np.sin(b)))


@dataclass(frozen=True)
class ExtractionParams:
    eps_split: float = 0.05
    n_min: int = 5
    eps_join: float = 0.3
    theta_corner: float = math.radians(30.0)
    jump_min: float = 0.3
    gap_min: float = 0.2
    gap_beams: float = 5.0
    doorway_min: float = 1.2
    doorway_max: float = 2.5
    # a doorway gap continues the wall at each jamb within this angle
    door_align: float = math.radians(20.0)
    # a corner's orientation comes from its two walls; short ones fit badly
    corner_min_wall: float = 1.0
    min_area: float = 1e-6


DEFAULT_PARAMS = ExtractionParams()


@dataclass
class Segment:
    first: int
    last: int
    start: np.ndarray
    end: np.ndarray
    direction: np.ndarray
    # point of the beam just outside each end (None: no return / edge of scan)
    before: np.ndarray | None = None
    after: np.ndarray | None = None
    # neighbouring beam exists but saw nothing within range
    open_before: bool = False
    open_after: bool = False

    @property
    def length(self):
        return float(np.linalg.norm(self.end - self.start))

    def line_distance(self, p):
        w = np.asarray(p) - self.start
        return abs(self.direction[0] * w[1] - self.direction[1] * w[0])


@dataclass
class FeaturePoint:
    position: np.ndarray
    cls: str
    incoming_dir: np.ndarray
    outgoing_dir: np.ndarray
    # True where two fitted walls meet, False at an occluding wall end
    joint: bool = True
    # length of the shorter wall meeting here
    support: float = math.inf

    @property
    def is_concave(self):
        return self.cls == "concave"


@dataclass
class Observation:
    kind: str
    position: np.ndarray
    orientation: float | None = None
    area: float | None = None
    sources: tuple = field(default_factory=tuple)


def _fit(pts):
    """Total-least-squares line through ``pts``: (start, end, unit dir, max residual)."""
    c = pts.mean(axis=0)
    q = pts - c
    _, _, vt = np.linalg.svd(q, full_matrices=False)
    d = vt[0]
    if np.dot(pts[-1] - pts[0], d) < 0:
        d = -d
    t = q @ d
    resid = np.abs(q[:, 0] * d[1] - q[:, 1] * d[0])
    return c + t[0] * d, c + t[-1] * d, d, float(resid.max())


def _runs(pts, ranges, step, params):
    """Index runs of consecutive valid beams with no large point gap."""
    valid = np.isfinite(ranges)
    runs = []
    lo = None
    for i in range(len(ranges)):
        if not valid[i]:
            if lo is not None:
                runs.append((lo, i - 1))
                lo = None
            continue
        if lo is None:
            lo = i
            continue
        gap = math.hypot(pts[i, 0] - pts[i - 1, 0], pts[i, 1] - pts[i - 1, 1])
        limit = params.gap_min + params.gap_beams * ranges[i] * step
        if gap > limit:
            runs.append((lo, i - 1))
            lo = i
    if lo is not None:
        runs.append((lo, len(ranges) - 1))
    return runs


def extract_segments(scan: ScanFrame, params: ExtractionParams = DEFAULT_PARAMS,
                     backend=None):
    """Split-and-merge line fit of a scan."""
    pts = scan.points()
    ranges = scan.ranges
    pieces = []
    for lo, hi in _runs(pts, ranges, scan.step, params):
        if hi - lo + 1 < params.n_min:
            continue
        for a, b in kernels.split_polyline(pts[lo:hi + 1], params.eps_split,
                                           params.n_min, backend=backend):
            pieces.append([lo + int(a), lo + int(b)])

    # merge neighbours whose joint fit stays within eps_split
    merged = []
    for p in pieces:
        if merged and p[0] - merged[-1][1] <= 1:
            lo, hi = merged[-1][0], p[1]
            if _fit(pts[lo:hi + 1])[3] <= params.eps_split:
                merged[-1] = [lo, hi]
                continue
        merged.append(p)

    segs = []
    n = len(ranges)
    for lo, hi in merged:
        s, e, d, _ = _fit(pts[lo:hi + 1])
        before = pts[lo - 1] if lo > 0 and np.isfinite(ranges[lo - 1]) else None
        after = pts[hi + 1] if hi + 1 < n and np.isfinite(ranges[hi + 1]) else None
        # a wall fading out at max range is not an occluding end
        near = scan.max_range - params.jump_min
        open_before = lo > 0 and not np.isfinite(ranges[lo - 1]) and ranges[lo] < near
        open_after = hi + 1 < n and not np.isfinite(ranges[hi + 1]) and ranges[hi] < near
        segs.append(Segment(lo, hi, s, e, d, before, after, open_before, open_after))
    return segs


def _cross(a, b):
    return float(a[0] * b[1] - a[1] * b[0])


def _angle_between(a, b):
    return math.acos(max(-1.0, min(1.0, float(np.dot(a, b)))))


def _intersect(s, t):
    den = _cross(s.direction, t.direction)
    if abs(den) < 1e-12:
        return None
    k = _cross(t.start - s.start, t.direction) / den
    return s.start + k * s.direction


def _occluding_end(seg, p, neighbour, open_, params):
    """True if the wall really ends at ``p``: the next beam sees nothing or
    lands well behind it, and not on the continuation of the same line."""
    if open_:
        return True
    if neighbour is None:
        return False
    if np.linalg.norm(neighbour) < np.linalg.norm(p) + params.jump_min:
        return False
    return seg.line_distance(neighbour) > params.eps_split * 2


def classify_feature_points(segments, params: ExtractionParams = DEFAULT_PARAMS):
    """Wall junctions and occluding wall ends, ordered by scan bearing.

    Junction class follows the free-space angle seen from the sensor:
    a left turn in scan order (< 180 deg of free space, e.g. a room's
    inside corner) is convex, a right turn (> 180 deg, e.g. a door jamb
    or a protruding wall corner) is concave. Occluding wall ends are
    always concave.
    """
    out = []
    joined_prev = False
    for i, s in enumerate(segments):
        if not joined_prev and _occluding_end(s, s.start, s.before, s.open_before, params):
            ray = s.start / np.linalg.norm(s.start)
            if _angle_between(-ray, s.direction) >= params.theta_corner:
                out.append(FeaturePoint(s.start.copy(), "concave", -ray, s.direction.copy(),
                                        joint=False))
        joined_prev = False
        t = segments[i + 1] if i + 1 < len(segments) else None
        if t is not None and np.linalg.norm(t.start - s.end) <= params.eps_join:
            turn = _angle_between(s.direction, t.direction)
            if turn >= params.theta_corner:
                x = _intersect(s, t)
                if x is not None and np.linalg.norm(x - s.end) <= params.eps_join \
                        and np.linalg.norm(x - t.start) <= params.eps_join:
                    cls = "convex" if _cross(s.direction, t.direction) > 0 else "concave"
                    out.append(FeaturePoint(x, cls, s.direction.copy(), t.direction.copy(),
                                            support=min(s.length, t.length)))
                    joined_prev = True
                    continue
        if _occluding_end(s, s.end, s.after, s.open_after, params):
            ray = s.end / np.linalg.norm(s.end)
            if _angle_between(s.direction, ray) >= params.theta_corner:
                out.append(FeaturePoint(s.end.copy(), "concave", s.direction.copy(), ray,
                                        joint=False))
    return out


def line_orientation(a, b):
    """Direction of the undirected line a-b, in [0, pi)."""
    th = math.atan2(b[1] - a[1], b[0] - a[0]) % math.pi
    return 0.0 if th >= math.pi else th


def _sees_through(scan, p, margin):
    """True if the beams toward ``p`` pass beyond it (or see nothing)."""
    d = float(np.hypot(p[0], p[1]))
    k = int(round((math.atan2(p[1], p[0]) - scan.bearing_min) / scan.step))
    if not 1 <= k < SAMPLES - 1:
        return True
    r = scan.ranges[k - 1:k + 2]
    return bool((r > d + margin).all())


def _in_line(f: FeaturePoint, u, params):
    """True if one of the walls at ``f`` runs along the unit vector ``u``."""
    lim = math.sin(params.door_align)
    return any(abs(_cross(d, u)) <= lim for d in (f.incoming_dir, f.outgoing_dir))


def detect_doorways(features, params: ExtractionParams = DEFAULT_PARAMS, scan=None):
    """Pairs of concave points at doorway width whose gap lines up with the
    walls at both ends.

    With ``scan`` given, a pair only counts if the scan sees through the
    middle of the gap.
    """
    out = []
    idx = [k for k, f in enumerate(features) if f.is_concave]
    for a in range(len(idx)):
        for b in range(a + 1, len(idx)):
            i, j = idx[a], idx[b]
            p, q = features[i].position, features[j].position
            d = float(np.linalg.norm(q - p))
            if params.doorway_min <= d <= params.doorway_max:
                u = (q - p) / d
                if not (_in_line(features[i], u, params) and _in_line(features[j], u, params)):
                    continue
                if scan is not None and not _sees_through(scan, (p + q) / 2.0, params.jump_min):
                    continue
                out.append(Observation("doorway", (p + q) / 2.0,
                                       orientation=line_orientation(p, q), sources=(i, j)))
    return out


def wall_normal(direction):
    """Normal of a wall traversed in scan order, pointing at the sensor side."""
    return np.array([-direction[1], direction[0]])


def corner_orientation(fp: FeaturePoint):
    n = wall_normal(fp.incoming_dir) + wall_normal(fp.outgoing_dir)
    return math.atan2(n[1], n[0]) % (2 * math.pi)


def detect_corners(features, doorways=(), params: ExtractionParams = DEFAULT_PARAMS):
    used = {k for obs in doorways for k in obs.sources}
    out = []
    for k, f in enumerate(features):
        # only junctions of two walls carry a defined normal
        if f.is_concave and f.joint and k not in used and f.support >= params.corner_min_wall:
            out.append(Observation("corner", f.position.copy(),
                                   orientation=corner_orientation(f), sources=(k,)))
    return out


def triangle_area(a, b, c):
    return abs(_cross(b - a, c - a)) / 2.0


def detect_rooms(features, params: ExtractionParams = DEFAULT_PARAMS):
    out = []
    for i in range(1, len(features) - 1):
        trio = features[i - 1:i + 2]
        if all(f.cls == "convex" for f in trio):
            a, b, c = (f.position for f in trio)
            area = triangle_area(a, b, c)
            if area > params.min_area:
                out.append(Observation("room", (a + b + c) / 3.0, area=area,
                                       sources=(i - 1, i, i + 1)))
    return out


def observe(scan: ScanFrame, params: ExtractionParams = DEFAULT_PARAMS, backend=None):
    """Full per-scan pipeline. Returns (features, observations)."""
    segs = extract_segments(scan, params, backend=backend)
    feats = classify_feature_points(segs, params)
    doors = detect_doorways(feats, params, scan)
    obs = doors + detect_rooms(feats, params) + detect_corners(feats, doors, params)
    return feats, obs


def features_csv(t, features):
    """Debug dump, one ``t,x,y,cls`` row per feature point."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "x", "y", "cls"])
    for f in features:
        w.writerow([f"{t:.3f}", f"{f.position[0]:.4f}", f"{f.position[1]:.4f}", f.cls])
    return buf.getvalue()

"""Error-tolerant hash search of observed landmarks against an encoded graph.

The robot only knows its dead-reckoned pose. An observation is moved to the
global frame with that pose and the grid cells around it are hashed in
nearest-first order until one digest is a published node.
"""
from __future__ import annotations

import functools
import hashlib
import math
import time
from dataclasses import dataclass

import numpy as np

from . import hashing as H
from .geometry import Pose2D
from .hashing import HashingConfig, SEP
from .map_encoder import EncodedNavGraph, extra_index


ORIENTED = ("doorway", "corner", "qr")


@dataclass(frozen=True)
class SearchBudget:
    tolerance: float = 0.5
    delta: float = 0.1

    def __post_init__(self):
        if not (self.tolerance > 0 and self.delta > 0):
            raise ValueError("tolerance and delta must be > 0")

    @classmethod
    def for_config(cls, cfg: HashingConfig, tolerance=0.5):
        return cls(tolerance, cfg.delta)

    @property
    def rings(self):
        return ring_count(self.tolerance, self.delta)

    @property
    def offset_count(self):
        return (2 * self.rings + 1) ** 2

    def shrunk(self, tolerance):
        return SearchBudget(min(tolerance, self.tolerance), self.delta)


def ring_count(R, delta):
    # tiny slack so 0.5/0.1 style ratios land on their integer
    return int(math.floor(R / delta + 1e-9))


@functools.lru_cache(maxsize=32)
def _spiral(rings):
    out = [(0, 0)]
    for r in range(1, rings + 1):
        # clockwise (y up) starting at (r, 0)
        out += [(r, -k) for k in range(0, r + 1)]
        out += [(x, -r) for x in range(r - 1, -r - 1, -1)]
        out += [(-r, y) for y in range(-r + 1, r + 1)]
        out += [(x, r) for x in range(-r + 1, r + 1)]
        out += [(r, y) for y in range(r - 1, 0, -1)]
    arr = np.array(out, dtype=np.int64)
    arr.setflags(write=False)
    return arr


def spiral_offsets(R, delta):
    """Integer grid offsets within Chebyshev radius floor(R/delta), nearest ring first."""
    if not (R > 0 and delta > 0):
        raise ValueError("R and delta must be > 0")
    return _spiral(ring_count(R, delta))


def spiral_rank(dx, dy):
    """(ring, position within ring) of an offset; sorts like spiral_offsets."""
    r = max(abs(dx), abs(dy))
    if r == 0:
        return 0, 0.0
    # clockwise angle from +x, in [0, 2pi)
    return r, (-math.atan2(dy, dx)) % (2 * math.pi)


@dataclass
class MatchResult:
    node: int
    kind: str
    indices: tuple
    extra: int | None
    offset: tuple
    trials: int
    elapsed: float
    pose: Pose2D | None = None

    @property
    def preimage(self) -> bytes:
        fields = [self.kind, *map(str, self.indices)]
        if self.extra is not None:
            fields.append(str(self.extra))
        return SEP.join(fields).encode()

    def grid_position(self, delta):
        return tuple(i * delta for i in self.indices)


def observed_extra(obs, est_pose: Pose2D, cfg: HashingConfig):
    """Extra preimage field of an observation under the estimated heading."""
    orient = None
    if obs.orientation is not None:
        orient = obs.orientation + est_pose.theta
    if obs.kind == "doorway" or obs.kind == "corner":
        if orient is None:
            return None
    if obs.kind == "room" and obs.area is None:
        return None
    return extra_index(obs.kind, orient, obs.area, cfg)


def match_observation(obs, est_pose: Pose2D, g: EncodedNavGraph, budget: SearchBudget = None):
    """First spiral offset whose digest is a node of ``g``, or None.

    ``obs.position`` is in the robot frame. Returns a MatchResult with the
    corrected robot pose filled in; ``trials`` counts hashes computed.
    """
    return search(obs, est_pose, g, budget)[0]


def search(obs, est_pose: Pose2D, g: EncodedNavGraph, budget: SearchBudget = None):
    """Like :func:`match_observation` but also returns the trial count, which
    is the full window size when nothing matches."""
    t0 = time.perf_counter()
    cfg = g.cfg
    budget = budget or SearchBudget.for_config(cfg)
    if abs(budget.delta - cfg.delta) > 1e-12:
        raise ValueError("search grid must match the graph's delta")
    extra = observed_extra(obs, est_pose, cfg)
    if extra is None and obs.kind in ("doorway", "corner", "room"):
        return None, 0
    gx, gy = est_pose.to_global(obs.position)
    d = cfg.delta
    qx0, qy0 = H.quantize_scalar(gx, d), H.quantize_scalar(gy, d)
    qz = 0
    prefix = (obs.kind + SEP).encode()
    suffix = (SEP + str(qz) + ("" if extra is None else SEP + str(extra))).encode()
    index = g.node_index()
    sha = hashlib.sha3_256
    trials = 0
    for dx, dy in spiral_offsets(budget.tolerance, d).tolist():
        trials += 1
        qx, qy = qx0 + dx, qy0 + dy
        digest = sha(prefix + f"{qx}{SEP}{qy}".encode() + suffix).digest()
        node = index.get(digest)
        if node is not None:
            m = MatchResult(node, obs.kind, (qx, qy, qz), extra, (dx, dy), trials,
                            time.perf_counter() - t0)
            m.pose = update_pose(m, obs, est_pose, cfg)
            return m, trials
    return None, trials


def match_payload(payload, obs, est_pose: Pose2D, g: EncodedNavGraph, budget=None):
    """QR path: the payload names the node outright; the position still has
    to be recovered by the same spiral search to correct the pose."""
    node = g.node_index().get(payload)
    if node is None:
        return None
    m = match_observation(obs, est_pose, g, budget)
    if m is not None and m.node != node:
        return None
    return m


def update_pose(match: MatchResult, obs, est_pose: Pose2D, cfg: HashingConfig) -> Pose2D:
    """Robot pose implied by the matched landmark.

    Heading is reset first for kinds that carry an orientation, then the
    observed displacement is rotated with the corrected heading.
    """
    theta = est_pose.theta
    if match.kind in ORIENTED and match.extra is not None and obs.orientation is not None:
        k = cfg.angle_bins
        encoded = H.bin_center(match.extra, k)
        period = math.pi if match.kind == "doorway" else 2 * math.pi
        resid = math.remainder(encoded - (obs.orientation + theta), period)
        theta = theta + resid
    lx, ly, _ = match.grid_position(cfg.delta)
    c, s = math.cos(theta), math.sin(theta)
    ox, oy = obs.position[0], obs.position[1]
    return Pose2D(lx - (c * ox - s * oy), ly - (s * ox + c * oy), theta)


@dataclass
class DecodedEdge:
    bin: int
    target: int
    digest: bytes

    def bearing(self, k):
        return H.bin_center(self.bin, k)


def decode_outgoing_edges(g: EncodedNavGraph, match: MatchResult, k=None):
    """Try every bearing bin for the matched node; K trials exactly."""
    k = k or g.cfg.angle_bins
    row = g.row(match.node)
    out = []
    for b in range(k):
        d = H.hash256(H.edge_preimage(match.kind, match.indices, b, g.cfg))
        j = row.get(d)
        if j is not None:
            out.append(DecodedEdge(b, j, d))
    return out

"""Mission executor: a robot touring an encoded graph inside the simulator.

:class:`Robot` is everything that runs on the robot. It is fed scans or QR
detections, odometry increments and the encoded graph, and never sees the
true pose. :func:`run_mission` is the simulator loop around it.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import features as F
from .geometry import Pose2D
from .hashing import wrap_pi
from .localizer import (
    SearchBudget, search, match_payload, decode_outgoing_edges, ORIENTED,
)
from .map_encoder import EncodedNavGraph
from .world import (
    World, LidarModel, OdometryModel, QrModel, Odometer, raycast_scan, detect_qr,
    qr_payloads,
)

LOG_HEADER = ["t", "true_x", "true_y", "true_th", "odom_x", "odom_y", "odom_th",
              "hash_x", "hash_y", "hash_th", "event", "feat_ms", "search_ms", "trials"]


@dataclass(frozen=True)
class ControlParams:
    dt: float = 0.1
    scan_period: float = 1.0
    speed: float = 0.5
    max_turn: float = 1.0
    # rotate in place while the heading error exceeds this
    turn_first: float = 0.35
    heading_gain: float = 2.0
    line_gain: float = 1.0
    # a node counts as reached within this distance; doorways are passed
    # through near their centre, corners and QR markers sit on walls
    arrival_radius: float = 0.8
    door_arrival_radius: float = 0.3
    wall_arrival_radius: float = 1.0
    edge_timeout: float = 40.0
    # commanded forward motion with no odometry translation for this long
    # counts as blocked
    stall_time: float = 2.0
    # abort if no node has been matched this long after the start
    localize_timeout: float = 60.0
    tolerance: float = 0.5
    # search window once a scan has already produced a match
    post_match_tolerance: float = 0.2
    # skip room matches while 3 sigma of heading error, times the range to
    # the room centroid, exceeds this many metres
    room_gate: float = 0.15


@dataclass(frozen=True)
class MissionConfig:
    duration: float = 300.0
    sensing: str = "lidar"
    lidar: LidarModel = LidarModel()
    odometry: OdometryModel = OdometryModel()
    qr: QrModel = QrModel()
    control: ControlParams = ControlParams()
    params: F.ExtractionParams = F.DEFAULT_PARAMS
    seed: int = 0
    stop_when_done: bool = True

    def __post_init__(self):
        if self.sensing not in ("lidar", "qr"):
            raise ValueError(f"unknown sensing mode {self.sensing!r}")
        if not self.duration > 0:
            raise ValueError("duration must be > 0")


@dataclass
class MatchEvent:
    t: float
    node: int
    kind: str
    trials: int
    est_before: Pose2D
    est_after: Pose2D


class Robot:
    """Robot-side state machine: localize, decode, pick an edge, drive."""

    def __init__(self, g: EncodedNavGraph, start_heading: float, ctrl: ControlParams,
                 sigma_r: float, sensing="lidar", params=F.DEFAULT_PARAMS):
        self.g = g
        self.ctrl = ctrl
        self.sensing = sensing
        self.params = params
        sx, sy = g.start_position[0], g.start_position[1]
        self.est = Pose2D(sx, sy, start_heading)
        self.odom = Pose2D(sx, sy, start_heading)
        self.sigma_r = sigma_r
        # conservative (fully correlated) heading uncertainty since last fix
        self.heading_sigma = 0.0
        self.budget = SearchBudget.for_config(g.cfg, ctrl.tolerance)
        self.post_budget = self.budget.shrunk(ctrl.post_match_tolerance)

        self.matches = {}          # node -> latest MatchResult
        self.out_edges = {}        # node -> decoded edges
        self.failed = set()        # (i, j) edges given up on
        self.stack = []
        self.visited = set()       # nodes arrived at
        self.mode = "localize"
        self.target = None         # node we are heading for
        self.line = None           # (origin, bearing) while following an edge
        self.mode_since = 0.0
        self.last_v = 0.0
        self.stalled = 0.0
        self.events = []
        self.match_log = []
        self.done = False
        self.aborted = False

    # -- sensing ------------------------------------------------------------

    def on_odometry(self, inc):
        dx, dy, dth = inc
        if self.last_v > 0 and math.hypot(dx, dy) < 1e-9:
            self.stalled += self.ctrl.dt
        else:
            self.stalled = 0.0
        self.est = self.est.compose(dx, dy, dth)
        self.odom = self.odom.compose(dx, dy, dth)
        self.heading_sigma += self.sigma_r * abs(dth)

    def _apply(self, t, m, obs_kind):
        before = self.est
        self.est = m.pose
        if obs_kind in ORIENTED and m.extra is not None:
            self.heading_sigma = 0.0
        self.match_log.append(MatchEvent(t, m.node, m.kind, m.trials, before, m.pose))
        self.events.append(f"match:{m.node}")
        self.matches[m.node] = m
        if m.node not in self.out_edges:
            self.out_edges[m.node] = decode_outgoing_edges(self.g, m)
            self.events.append(f"decode:{m.node}:{len(self.out_edges[m.node])}")
        self._on_node_seen(t, m.node)

    def _room_allowed(self, obs):
        rng = math.hypot(obs.position[0], obs.position[1])
        return 3.0 * self.heading_sigma * rng <= self.ctrl.room_gate

    def on_scan(self, t, scan):
        """Returns (feature ms, search ms, trials)."""
        t0 = time.perf_counter()
        _, obs = F.observe(scan, self.params)
        t1 = time.perf_counter()
        # orientation-carrying kinds first: they also fix the heading
        obs.sort(key=lambda o: (o.kind == "room", float(np.hypot(*o.position))))
        trials = 0
        matched = False
        for o in obs:
            if o.kind == "room" and not self._room_allowed(o):
                continue
            m, n = search(o, self.est, self.g, self.post_budget if matched else self.budget)
            trials += n
            if m is not None:
                matched = True
                self._apply(t, m, o.kind)
        t2 = time.perf_counter()
        return (t1 - t0) * 1e3, (t2 - t1) * 1e3, trials

    def on_qr(self, t, detections):
        t1 = time.perf_counter()
        trials = 0
        for det in sorted(detections, key=lambda d: d.range):
            o = F.Observation("qr", np.array([det.range * math.cos(det.bearing),
                                              det.range * math.sin(det.bearing)]),
                              orientation=det.facing)
            m = match_payload(det.payload, o, self.est, self.g, self.budget)
            if m is None:
                # unknown payload costs nothing; a miss costs the full window
                if det.payload in self.g.node_index():
                    trials += self.budget.offset_count
                continue
            trials += m.trials
            self._apply(t, m, "qr")
        return 0.0, (time.perf_counter() - t1) * 1e3, trials

    # -- planning -----------------------------------------------------------

    def _node_xy(self, j):
        m = self.matches[j]
        d = self.g.cfg.delta
        return m.indices[0] * d, m.indices[1] * d

    def _on_node_seen(self, t, j):
        if self.mode == "localize":
            self._arrive(t, j)
        elif self.mode == "edge" and j == self.target:
            if self._dead_end(j):
                # seen on the way and nothing new lies beyond it: go back
                # to where the edge started and plan from there
                self.visited.add(j)
                self.target = self.stack[-1]
                self._line_to(self.est.xy, self.target)
                self._set_mode(t, "backtrack")
                return
            self._line_to(self.est.xy, j)
            self._set_mode(t, "approach")

    def _set_mode(self, t, mode):
        self.mode = mode
        self.mode_since = t
        self.events.append(f"mode:{mode}")

    def _arrive(self, t, j):
        if not self.stack or self.stack[-1] != j:
            self.stack.append(j)
        self.visited.add(j)
        self.events.append(f"arrive:{j}")
        self._plan(t)

    def frontier(self):
        """Decoded edge targets not matched yet."""
        return {e.target for i, es in self.out_edges.items() for e in es
                if e.target not in self.matches and (i, e.target) not in self.failed}

    def _dead_end(self, j):
        """True if no unmatched node is reachable from ``j`` through decoded
        edges without going back through the current DFS path."""
        seen = {j} | set(self.stack)
        todo = [j]
        while todo:
            i = todo.pop()
            if i not in self.matches:
                return False
            for e in self.out_edges.get(i, []):
                if e.target not in seen and (i, e.target) not in self.failed:
                    seen.add(e.target)
                    todo.append(e.target)
        return True

    def _todo(self, i):
        return [e for e in self.out_edges.get(i, [])
                if e.target not in self.visited and (i, e.target) not in self.failed
                and not self._dead_end(e.target)]

    def _plan(self, t):
        # every match decodes its edges, so an empty frontier means all
        # nodes reachable through decoded edges have been matched
        if not self.frontier():
            self.stack.clear()
        if self.stack:
            i = self.stack[-1]
            todo = self._todo(i)
            if todo:
                # depth-first by node index, unmatched nodes first
                e = min(todo, key=lambda e: (e.target in self.matches, e.target))
                self.target = e.target
                if e.target in self.matches:
                    self._line_to(self._node_xy(i), e.target)
                    self._set_mode(t, "approach")
                else:
                    self.line = (self._node_xy(i), e.bearing(self.g.cfg.angle_bins))
                    self._set_mode(t, "edge")
                return
            # backtrack to the deepest node on the path with work left,
            # cutting straight across where a decoded edge allows it
            live = [k for k in range(len(self.stack) - 1) if self._todo(self.stack[k])]
            if live:
                near = {e.target for e in self.out_edges.get(i, [])
                        if (i, e.target) not in self.failed}
                top = len(self.stack) - 2
                m = next((k for k in range(live[-1], top) if self.stack[k] in near), top)
                del self.stack[m + 1:]
                self.target = self.stack[m]
                self._line_to(self._node_xy(i), self.target)
                self._set_mode(t, "backtrack")
                return
            self.stack.clear()
        self.target = None
        self.done = True
        self._set_mode(t, "done")

    def _line_to(self, origin, j):
        xy = self._node_xy(j)
        self.line = (origin, math.atan2(xy[1] - origin[1], xy[0] - origin[0]))

    def _arrival_radius(self, j):
        c = self.ctrl
        kind = self.matches[j].kind
        if kind == "doorway":
            return c.door_arrival_radius
        if kind in ("corner", "qr"):
            return c.wall_arrival_radius
        return c.arrival_radius

    def _follow(self):
        """Heading command that converges on the current line."""
        (ox, oy), b = self.line
        ux, uy = math.cos(b), math.sin(b)
        cross = ux * (self.est.y - oy) - uy * (self.est.x - ox)
        return self._heading_cmd(b - math.atan(self.ctrl.line_gain * cross))

    def _heading_cmd(self, desired):
        c = self.ctrl
        err = wrap_pi(desired - self.est.theta)
        w = max(-c.max_turn, min(c.max_turn, c.heading_gain * err))
        v = 0.0 if abs(err) > c.turn_first else c.speed
        return v, w

    def _toward(self, xy):
        return math.atan2(xy[1] - self.est.y, xy[0] - self.est.x)

    def command(self, t):
        """Velocity command for this control tick."""
        c = self.ctrl
        if self.mode == "localize":
            if t - self.mode_since > c.localize_timeout:
                self.aborted = True
                self.done = True
                self._set_mode(t, "abort")
                return self._stop()
            return self._go((0.0, 0.3))
        if self.mode == "done" or self.mode == "abort":
            return self._stop()
        stuck = self.stalled >= c.stall_time
        if self.mode == "edge":
            if stuck or t - self.mode_since > c.edge_timeout:
                i = self.stack[-1]
                self.failed.add((i, self.target))
                self.events.append(f"{'stall' if stuck else 'timeout'}:{i}->{self.target}")
                self.target = i
                self._line_to(self.est.xy, i)
                self._set_mode(t, "failsafe")
                return self._stop()
            return self._go(self._follow())
        # approach / backtrack / failsafe: follow the line to a known node
        xy = self._node_xy(self.target)
        (ox, oy), b = self.line
        along = math.cos(b) * (xy[0] - self.est.x) + math.sin(b) * (xy[1] - self.est.y)
        if math.hypot(xy[0] - self.est.x, xy[1] - self.est.y) <= self._arrival_radius(self.target) \
                or along <= 0.0:
            self._arrive(t, self.target)
            return self._stop()
        if stuck or t - self.mode_since > c.edge_timeout:
            # give up on reaching it; carry on planning from there anyway
            self.events.append(f"{'stall' if stuck else 'timeout'}:{self.mode}:{self.target}")
            self._arrive(t, self.target)
            return self._stop()
        return self._go(self._follow())

    def _stop(self):
        self.stalled = 0.0
        return self._go((0.0, 0.0))

    def _go(self, cmd):
        self.last_v = cmd[0]
        return cmd

    def take_events(self):
        ev, self.events = self.events, []
        return ";".join(ev)


@dataclass
class MissionLog:
    rows: list = field(default_factory=list)
    matches: list = field(default_factory=list)
    feat_ms: list = field(default_factory=list)
    search_ms: list = field(default_factory=list)
    scan_trials: list = field(default_factory=list)
    aborted: bool = False
    done: bool = False
    # truth-side bookkeeping, filled by the simulator for evaluation
    true_at_match: list = field(default_factory=list)
    visible_mapped: list = field(default_factory=list)

    def column(self, name):
        k = LOG_HEADER.index(name)
        return np.array([r[k] for r in self.rows], dtype=float)

    def errors(self, which="hash"):
        tx, ty = self.column("true_x"), self.column("true_y")
        return np.hypot(self.column(which + "_x") - tx, self.column(which + "_y") - ty)

    def matched_nodes(self):
        return sorted({m.node for m in self.matches})

    def post_match_errors(self):
        return [math.hypot(m.est_after.x - p.x, m.est_after.y - p.y)
                for m, p in zip(self.matches, self.true_at_match)]

    def to_csv(self, timing=False):
        """CSV text; timing columns stay empty unless ``timing`` (they are
        wall-clock and would break byte-for-byte reproducibility)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for r in self.rows:
            out = [f"{r[0]:.1f}"] + [f"{v:.4f}" for v in r[1:10]] + [r[10]]
            if timing and r[11] is not None:
                out += [f"{r[11]:.4f}", f"{r[12]:.4f}"]
            else:
                out += ["", ""]
            out.append("" if r[13] is None else str(r[13]))
            w.writerow(out)
        return buf.getvalue()


def _visible_mapped(world: World, pose: Pose2D, lidar: LidarModel):
    """Truth side: mapped landmarks within range and line of sight."""
    out = []
    for lm in world.landmarks:
        dx, dy = lm.xy[0] - pose.x, lm.xy[1] - pose.y
        r = math.hypot(dx, dy)
        if r > lidar.max_range - 0.5 or r < 0.3:
            continue
        b = wrap_pi(math.atan2(dy, dx) - pose.theta)
        if abs(b) > lidar.fov / 2:
            continue
        out.append(lm.id)
    return out


def run_mission(world: World, g: EncodedNavGraph, cfg: MissionConfig = MissionConfig()):
    """Simulate one mission; deterministic in (world, graph, cfg)."""
    c = cfg.control
    odo = Odometer(cfg.odometry)
    sense_rng = np.random.default_rng([cfg.seed, 1])
    robot = Robot(g, world.start_pose.theta, c, cfg.odometry.sigma_r, cfg.sensing, cfg.params)
    payloads = qr_payloads(world, g.cfg) if cfg.sensing == "qr" else None
    true = world.start_pose
    log = MissionLog()
    scan_every = max(1, int(round(c.scan_period / c.dt)))
    n_ticks = int(round(cfg.duration / c.dt))
    for tick in range(n_ticks + 1):
        t = tick * c.dt
        feat_ms = search_ms = trials = None
        if tick % scan_every == 0:
            before = len(robot.match_log)
            if cfg.sensing == "lidar":
                scan = raycast_scan(world, true, cfg.lidar, sense_rng, t)
                feat_ms, search_ms, trials = robot.on_scan(t, scan)
                log.visible_mapped.append((t, _visible_mapped(world, true, cfg.lidar)))
            else:
                dets = detect_qr(world, true, cfg.qr, sense_rng, payloads)
                feat_ms, search_ms, trials = robot.on_qr(t, dets)
            log.feat_ms.append(feat_ms)
            log.search_ms.append(search_ms)
            log.scan_trials.append(trials)
            log.true_at_match.extend([true] * (len(robot.match_log) - before))
        cmd = robot.command(t)
        log.rows.append([t, true.x, true.y, true.theta, robot.odom.x, robot.odom.y,
                         robot.odom.theta, robot.est.x, robot.est.y, robot.est.theta,
                         robot.take_events(), feat_ms, search_ms, trials])
        if robot.done and cfg.stop_when_done:
            break
        res = odo.step(true, cmd, c.dt, world)
        true = res.pose
        robot.on_odometry(res.increment)
    log.matches = robot.match_log
    log.aborted = robot.aborted
    log.done = robot.done and not robot.aborted
    return log

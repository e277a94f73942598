"""Mission compiler: ground-truth landmarks in, public digest graph out."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from . import hashing as H
from .hashing import HashingConfig, HashingError, ZERO_DIGEST

KINDS = ("doorway", "corner", "room", "qr")
FORMAT_VERSION = 1


class LandmarkError(ValueError):
    pass


class CollisionError(LandmarkError):
    def __init__(self, a, b):
        super().__init__(f"landmarks {a} and {b} encode to the same digest")
        self.pair = (a, b)


class GraphFormatError(ValueError):
    """Malformed graph file. ``where`` is a JSON path or character offset."""

    def __init__(self, msg, where):
        super().__init__(f"{where}: {msg}")
        self.where = where


@dataclass
class LandmarkDescriptor:
    id: int
    kind: str
    position: tuple
    orientation: float | None = None
    area: float | None = None
    qr_payload: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise LandmarkError(f"landmark {self.id}: unknown kind {self.kind!r}")
        pos = tuple(float(c) for c in self.position)
        if len(pos) == 2:
            pos = pos + (0.0,)
        if len(pos) != 3 or not all(math.isfinite(c) for c in pos):
            raise LandmarkError(f"landmark {self.id}: bad position {self.position!r}")
        self.position = pos
        if self.kind in ("doorway", "corner") and self.orientation is None:
            raise LandmarkError(f"landmark {self.id}: {self.kind} needs an orientation")
        if self.kind == "room" and not (self.area is not None and self.area > 0):
            raise LandmarkError(f"landmark {self.id}: room needs a positive area")

    @property
    def xy(self):
        return self.position[0], self.position[1]


def extra_index(kind, orientation, area, cfg):
    """Kind-specific trailing preimage field, or None."""
    if kind == "doorway":
        return H.quantize_line_angle(orientation, cfg.angle_bins)
    if kind == "corner":
        return H.quantize_angle(orientation, cfg.angle_bins)
    if kind == "room":
        return H.quantize_scalar(area, cfg.area_quantum)
    if kind == "qr" and orientation is not None:
        # optional: the facing of a wall-mounted marker
        return H.quantize_angle(orientation, cfg.angle_bins)
    return None


def node_preimage(lm: LandmarkDescriptor, cfg: HashingConfig) -> bytes:
    try:
        extra = extra_index(lm.kind, lm.orientation, lm.area, cfg)
    except (TypeError, HashingError) as exc:
        raise LandmarkError(f"landmark {lm.id}: {exc}") from None
    return H.landmark_preimage(lm.kind, lm.position, extra, cfg)


def encode_node(lm: LandmarkDescriptor, cfg: HashingConfig) -> bytes:
    return H.hash256(node_preimage(lm, cfg))


def bearing_bin(src, dst, cfg):
    return H.quantize_angle(math.atan2(dst[1] - src[1], dst[0] - src[0]), cfg.angle_bins)


def encode_edge(src: LandmarkDescriptor, dst: LandmarkDescriptor, cfg) -> bytes:
    b = bearing_bin(src.position, dst.position, cfg)
    return H.hash256(H.edge_preimage(src.kind, H.grid_indices(src.position, cfg), b, cfg))


@dataclass
class EncodedNavGraph:
    node_digests: list
    edge_digests: list
    cfg: HashingConfig
    start_node: int = 0
    start_position: tuple = (0.0, 0.0, 0.0)
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.node_digests)
        if len(self.edge_digests) != n or any(len(r) != n for r in self.edge_digests):
            raise ValueError("edge table must be N x N")
        if not 0 <= self.start_node < max(n, 1):
            raise ValueError(f"start node {self.start_node} out of range")
        self.start_position = tuple(float(c) for c in self.start_position)

    @property
    def n(self):
        return len(self.node_digests)

    def node_index(self):
        """Mapping digest -> node index (built once)."""
        if self._index is None:
            self._index = {d: i for i, d in enumerate(self.node_digests)}
        return self._index

    def edges(self):
        """Nonzero entries as (i, j, digest), row-major."""
        return [(i, j, d) for i, row in enumerate(self.edge_digests)
                for j, d in enumerate(row) if d != ZERO_DIGEST]

    def row(self, i):
        """Mapping digest -> column for the nonzero entries of row ``i``."""
        return {d: j for j, d in enumerate(self.edge_digests[i]) if d != ZERO_DIGEST}


def build_nav_graph(landmarks, edges, cfg, start=0, start_position=None):
    lms = list(landmarks)
    n = len(lms)
    if [lm.id for lm in lms] != list(range(n)):
        raise LandmarkError("landmark ids must be unique and contiguous from 0")
    digests = []
    seen = {}
    for lm in lms:
        d = encode_node(lm, cfg)
        if d in seen:
            raise CollisionError(seen[d], lm.id)
        seen[d] = lm.id
        digests.append(d)
    table = [[ZERO_DIGEST] * n for _ in range(n)]
    for i, j in edges:
        if not (0 <= i < n and 0 <= j < n):
            raise LandmarkError(f"edge ({i}, {j}) references a missing landmark")
        if i == j:
            raise LandmarkError(f"self-edge on landmark {i}")
        table[i][j] = encode_edge(lms[i], lms[j], cfg)
    if start_position is None:
        start_position = lms[start].position if n else (0.0, 0.0, 0.0)
    return EncodedNavGraph(digests, table, cfg, start, tuple(start_position))


def graph_to_dict(g: EncodedNavGraph) -> dict:
    return {
        "version": FORMAT_VERSION,
        "cfg": {"delta": g.cfg.delta, "angle_bins": g.cfg.angle_bins,
                "area_quantum": g.cfg.area_quantum},
        "start": {"node": g.start_node, "position": list(g.start_position)},
        "nodes": [d.hex() for d in g.node_digests],
        "edges": [[i, j, d.hex()] for i, j, d in g.edges()],
    }


def serialize_graph(g: EncodedNavGraph) -> bytes:
    return (json.dumps(graph_to_dict(g), indent=1) + "\n").encode("utf-8")


def _expect(cond, msg, where):
    if not cond:
        raise GraphFormatError(msg, where)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return (isinstance(v, (int, float)) and not isinstance(v, bool)
            and math.isfinite(v))


def _digest(text, where):
    _expect(isinstance(text, str), "digest must be a string", where)
    try:
        return H.from_hex(text)
    except HashingError as exc:
        raise GraphFormatError(str(exc), where) from None


def parse_graph(data) -> EncodedNavGraph:
    if isinstance(data, (bytes, bytearray)):
        data = data.decode("utf-8")
    try:
        obj = json.loads(data)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(exc.msg, f"line {exc.lineno} col {exc.colno} (char {exc.pos})") from None
    _expect(isinstance(obj, dict), "top level must be an object", "$")
    _expect(obj.get("version") == FORMAT_VERSION,
            f"unsupported version {obj.get('version')!r}", "$.version")
    c = obj.get("cfg")
    _expect(isinstance(c, dict), "missing cfg object", "$.cfg")
    for key, check in (("delta", _is_num), ("angle_bins", _is_int), ("area_quantum", _is_num)):
        _expect(check(c.get(key)), f"bad or missing {key}", f"$.cfg.{key}")
    try:
        cfg = HashingConfig(delta=float(c["delta"]), angle_bins=c["angle_bins"],
                            area_quantum=float(c["area_quantum"]))
    except HashingError as exc:
        raise GraphFormatError(str(exc), "$.cfg") from None

    nodes = obj.get("nodes")
    _expect(isinstance(nodes, list), "nodes must be an array", "$.nodes")
    digests = [_digest(t, f"$.nodes[{k}]") for k, t in enumerate(nodes)]
    n = len(digests)

    s = obj.get("start")
    _expect(isinstance(s, dict), "missing start object", "$.start")
    _expect(_is_int(s.get("node")) and 0 <= s["node"] < max(n, 1),
            "start node out of range", "$.start.node")
    pos = s.get("position")
    _expect(isinstance(pos, list) and len(pos) in (2, 3) and all(_is_num(v) for v in pos),
            "start position must be 2 or 3 numbers", "$.start.position")

    if "matrix" in obj:
        table = parse_table(obj["matrix"], n)
        for i in range(n):
            _expect(table[i][i] == ZERO_DIGEST, "diagonal entries must be empty",
                    f"$.matrix[{i}][{i}]")
        start_pos = tuple(pos) + ((0.0,) if len(pos) == 2 else ())
        return EncodedNavGraph(digests, table, cfg, s["node"], start_pos)

    table = [[ZERO_DIGEST] * n for _ in range(n)]
    raw_edges = obj.get("edges")
    _expect(isinstance(raw_edges, list), "edges must be an array", "$.edges")
    for k, e in enumerate(raw_edges):
        where = f"$.edges[{k}]"
        _expect(isinstance(e, list) and len(e) == 3, "edge must be [i, j, digest]", where)
        i, j, text = e
        _expect(_is_int(i) and 0 <= i < n, f"row {i!r} out of range", where + "[0]")
        _expect(_is_int(j) and 0 <= j < n, f"column {j!r} out of range", where + "[1]")
        _expect(i != j, "diagonal entries must be empty", where)
        d = _digest(text, where + "[2]")
        _expect(d != ZERO_DIGEST, "explicit zero digest", where + "[2]")
        _expect(table[i][j] == ZERO_DIGEST, "duplicate entry", where)
        table[i][j] = d
    start_pos = tuple(pos) + ((0.0,) if len(pos) == 2 else ())
    return EncodedNavGraph(digests, table, cfg, s["node"], start_pos)


def parse_table(rows, n):
    """Dense alternative to ``edges``: N rows of N hex digests, zeros for no edge."""
    if not isinstance(rows, list) or len(rows) != n:
        raise GraphFormatError(f"table must have {n} rows", "$.matrix")
    out = []
    for r, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != n:
            raise GraphFormatError(f"row length must be {n}", f"$.matrix[{r}]")
        out.append([_digest(t, f"$.matrix[{r}][{c}]") for c, t in enumerate(row)])
    return out

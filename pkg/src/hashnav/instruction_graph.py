"""Encoded instruction graphs: missions published only as digests.

A node or edge is unlocked by reproducing the preimage of its digest from
whatever the robot has at hand: sensed data, its grid cell, the current
time window, tokens from other agents and its own actions. The robot does
not know which combination a step needs, so it tries a bounded catalog.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, replace

from . import hashing as H
from .hashing import HashingConfig, SEP, ZERO_DIGEST
from .map_encoder import GraphFormatError, _digest, _expect, _is_int

# tags of the trigger input kinds, first field of each serialization
SENSOR, POSITION, WINDOW, TOKEN, ACTION = "s", "p", "w", "x", "a"
KINDS = (SENSOR, POSITION, WINDOW, TOKEN, ACTION)
MAX_COMBINATION = 3
FORMAT = "instructions"


@dataclass(frozen=True)
class TriggerInput:
    """One tagged input. ``value`` is a 32-byte digest for sensor and token
    inputs, a tuple of grid indices for positions, an int for windows and
    text for actions."""
    kind: str
    value: object

    def __post_init__(self):
        k, v = self.kind, self.value
        if k in (SENSOR, TOKEN):
            if not (isinstance(v, bytes) and len(v) == H.DIGEST_SIZE):
                raise ValueError(f"{k} input needs a {H.DIGEST_SIZE}-byte digest")
        elif k == POSITION:
            object.__setattr__(self, "value", tuple(int(i) for i in v))
        elif k == WINDOW:
            object.__setattr__(self, "value", int(v))
        elif k == ACTION:
            if not isinstance(v, str) or not v or SEP in v:
                raise ValueError(f"action id must be nonempty text without {SEP!r}")
        else:
            raise ValueError(f"unknown trigger kind {k!r}")

    def serialize(self) -> str:
        k, v = self.kind, self.value
        if k in (SENSOR, TOKEN):
            return f"{k}{SEP}{v.hex()}"
        if k == POSITION:
            # every kind has a fixed field count once the length is known,
            # so a joined list parses back one way only
            return SEP.join([k, str(len(v)), *map(str, v)])
        return f"{k}{SEP}{v}"

    # constructors
    @classmethod
    def sensor(cls, data: bytes):
        """Input from raw sensed bytes (hashed) or an existing digest."""
        if len(data) != H.DIGEST_SIZE:
            data = H.hash256(bytes(data))
        return cls(SENSOR, data)

    @classmethod
    def position(cls, xyz, cfg: HashingConfig):
        return cls(POSITION, H.grid_indices(xyz, cfg))

    @classmethod
    def window(cls, t, cfg: HashingConfig):
        return cls(WINDOW, H.window_index(t, cfg))

    @classmethod
    def token(cls, digest: bytes):
        return cls(TOKEN, digest)

    @classmethod
    def action(cls, name: str):
        return cls(ACTION, name)


def compose_trigger(inputs) -> bytes:
    """Digest of the ordered inputs; order matters."""
    inputs = list(inputs)
    if not inputs:
        raise ValueError("a trigger needs at least one input")
    return H.hash256(SEP.join(i.serialize() for i in inputs).encode("utf-8"))


def trigger_catalog(inputs, max_size=MAX_COMBINATION):
    """Every ordered selection of 1..max_size distinct inputs, shortest
    first, in a fixed order. Yields (combination, digest)."""
    inputs = list(dict.fromkeys(inputs))
    for r in range(1, min(max_size, len(inputs)) + 1):
        for combo in itertools.permutations(inputs, r):
            yield combo, compose_trigger(combo)


def catalog_size(n, max_size=MAX_COMBINATION):
    total, run = 0, 1
    for r in range(1, min(max_size, n) + 1):
        run *= n - r + 1
        total += run
    return total


@dataclass
class EncodedInstructionGraph:
    nodes: list
    edges: list                 # (from, to, digest); ZERO_DIGEST marks an empty edge
    entry: tuple = (0,)

    def __post_init__(self):
        n = len(self.nodes)
        for d in self.nodes:
            if len(d) != H.DIGEST_SIZE or d == ZERO_DIGEST:
                raise ValueError("node digests must be nonzero 32-byte values")
        self.edges = [(int(i), int(j), d) for i, j, d in self.edges]
        for i, j, d in self.edges:
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge ({i}, {j}) references a missing node")
            if len(d) != H.DIGEST_SIZE:
                raise ValueError("edge digests must be 32 bytes")
        self.entry = tuple(int(e) for e in self.entry)
        if any(not 0 <= e < n for e in self.entry):
            raise ValueError("entry node out of range")

    @property
    def n(self):
        return len(self.nodes)

    def out_edges(self, i):
        return [e for e in self.edges if e[0] == i]

    @classmethod
    def from_triggers(cls, node_triggers, edge_triggers, entry=(0,)):
        """Compiler side: build from plaintext trigger lists. An edge trigger
        of None gives an empty edge."""
        nodes = [compose_trigger(t) for t in node_triggers]
        edges = [(i, j, ZERO_DIGEST if t is None else compose_trigger(t))
                 for i, j, t in edge_triggers]
        return cls(nodes, edges, tuple(entry))

    @classmethod
    def path(cls, node_triggers):
        n = len(node_triggers)
        return cls.from_triggers(node_triggers, [(i, i + 1, None) for i in range(n - 1)])


@dataclass(frozen=True)
class MissionState:
    decoded: frozenset = frozenset()
    # nodes reached by the latest transition; their out-edges form the frontier
    current: tuple = ()
    history: tuple = ()          # (node, trigger inputs)
    trials: int = 0

    def frontier(self, g: EncodedInstructionGraph):
        """Candidate transitions as (from, to, edge digest); ``from`` is None
        for entry nodes before anything has been decoded."""
        if not self.current:
            return [(None, e, ZERO_DIGEST) for e in g.entry]
        cur = set(self.current)
        return [e for e in g.edges if e[0] in cur]


def try_advance(state: MissionState, g: EncodedInstructionGraph, inputs,
                max_size=MAX_COMBINATION):
    """One round of trial and error over the frontier.

    A non-empty edge needs its own digest reproduced and then the target
    node's; an empty edge needs the target only. Returns the new state and
    the list of decoded node indices in frontier order; when nothing
    matches the state is returned unchanged.
    """
    found = {}
    n_trials = 0
    for combo, d in trigger_catalog(inputs, max_size):
        n_trials += 1
        found.setdefault(d, combo)
    decoded, hist = [], []
    for _, j, ed in state.frontier(g):
        if j in decoded:
            continue
        if ed != ZERO_DIGEST and ed not in found:
            continue
        combo = found.get(g.nodes[j])
        if combo is None:
            continue
        decoded.append(j)
        hist.append((j, combo))
    if not decoded:
        return state, []
    new = replace(state, decoded=state.decoded | frozenset(decoded), current=tuple(decoded),
                  history=state.history + tuple(hist), trials=state.trials + n_trials)
    return new, decoded


def check_state(state: MissionState, g: EncodedInstructionGraph):
    """Every history entry recomputes to its node digest."""
    return all(compose_trigger(c) == g.nodes[j] for j, c in state.history) and \
        {j for j, _ in state.history} == set(state.decoded)


def validate_timed_token(token: bytes, base: bytes, t, cfg: HashingConfig, skew=1):
    """True iff ``token`` is ``base`` salted with a window within ``skew`` of t's."""
    if skew < 0:
        raise ValueError("skew must be >= 0")
    w = H.window_index(t, cfg)
    return any(H.timed_token_for_window(base, k) == token
               for k in range(w - skew, w + skew + 1))


def spatial_token(base: bytes, position, cfg: HashingConfig) -> bytes:
    """``base`` salted with a grid cell, valid only where it was made."""
    q = H.grid_indices(position, cfg)
    return H.hash256(SEP.join([base.hex(), POSITION, *map(str, q)]).encode("utf-8"))


def graph_to_dict(g: EncodedInstructionGraph) -> dict:
    return {"format": FORMAT, "entry": list(g.entry),
            "nodes": [d.hex() for d in g.nodes],
            "edges": [[i, j, d.hex()] for i, j, d in g.edges]}


def graph_from_dict(obj) -> EncodedInstructionGraph:
    _expect(isinstance(obj, dict), "top level must be an object", "$")
    _expect(obj.get("format") == FORMAT, f"format must be {FORMAT!r}", "$.format")
    _expect(isinstance(obj.get("nodes"), list), "nodes must be an array", "$.nodes")
    nodes = [_digest(t, f"$.nodes[{k}]") for k, t in enumerate(obj["nodes"])]
    n = len(nodes)
    _expect(isinstance(obj.get("edges"), list), "edges must be an array", "$.edges")
    edges = []
    for k, e in enumerate(obj["edges"]):
        where = f"$.edges[{k}]"
        _expect(isinstance(e, list) and len(e) == 3, "edge must be [from, to, digest]", where)
        _expect(all(_is_int(v) and 0 <= v < n for v in e[:2]), "node index out of range", where)
        edges.append((e[0], e[1], _digest(e[2], where + "[2]")))
    entry = obj.get("entry", [0])
    _expect(isinstance(entry, list) and all(_is_int(v) and 0 <= v < n for v in entry),
            "entry must list node indices", "$.entry")
    for key in obj:
        _expect(key in ("format", "entry", "nodes", "edges"), f"unexpected field {key!r}", "$")
    return EncodedInstructionGraph(nodes, edges, tuple(entry))


def dumps_graph(g: EncodedInstructionGraph) -> str:
    return json.dumps(graph_to_dict(g), indent=1) + "\n"


def loads_graph(text) -> EncodedInstructionGraph:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphFormatError(exc.msg, f"char {exc.pos}") from None
    return graph_from_dict(obj)

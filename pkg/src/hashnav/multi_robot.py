"""Mutual validation: two robots holding disjoint halves of a mission.

Each robot only holds digests for its own steps. Some steps can only be
decoded with a token the other robot emits after finishing one of its
steps, or with what it sees the other robot doing. Tokens travel as bare
32-byte envelopes over a lossy, possibly hostile channel; nothing in an
envelope means anything without the matching mission half.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import hashing as H
from .hashing import HashingConfig, ZERO_DIGEST
from .instruction_graph import (
    TriggerInput, EncodedInstructionGraph, MissionState, compose_trigger, try_advance,
)

OWN, PEER_TOKEN, PEER_BEHAVIOR = "own_sensor", "peer_token", "peer_behavior"
RECIPE_KINDS = (OWN, PEER_TOKEN, PEER_BEHAVIOR)
ATTACKS = ("corrupt", "replay", "forge")
TRANSCRIPT_HEADER = ["round", "sender", "seq", "token", "delivered", "corrupted"]


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class StepRecipe:
    sensor: str                      # label of what the robot senses at this step
    needs: tuple = (OWN,)
    peer_step: int | None = None     # peer step whose token/behaviour is needed
    cell: tuple | None = None        # grid cell the robot occupies at this step

    def __post_init__(self):
        object.__setattr__(self, "needs", tuple(self.needs))
        if not self.needs or any(k not in RECIPE_KINDS for k in self.needs) \
                or len(set(self.needs)) != len(self.needs):
            raise ScenarioError(f"bad recipe {self.needs!r}")
        if (PEER_TOKEN in self.needs or PEER_BEHAVIOR in self.needs) != (self.peer_step is not None):
            raise ScenarioError("peer_step must be given exactly when a peer input is needed")
        if self.cell is not None:
            object.__setattr__(self, "cell", tuple(int(c) for c in self.cell))


@dataclass(frozen=True)
class RobotSpec:
    name: str
    steps: tuple
    start_cell: tuple = (0, 0)


@dataclass(frozen=True)
class MutualMissionSpec:
    robots: tuple
    timed: bool = False
    skew: int = 1
    time_window: float = 10.0
    start_time: float = 0.0

    def __post_init__(self):
        if len(self.robots) != 2:
            raise ScenarioError("exactly two robots are supported")
        if self.robots[0].name == self.robots[1].name:
            raise ScenarioError("robot names must differ")
        if self.skew < 0:
            raise ScenarioError("skew must be >= 0")
        for r, peer in ((self.robots[0], self.robots[1]), (self.robots[1], self.robots[0])):
            for k, s in enumerate(r.steps):
                where = f"{r.name} step {k}"
                if s.peer_step is not None and not 0 <= s.peer_step < len(peer.steps):
                    raise ScenarioError(f"{where}: peer step {s.peer_step} does not exist")
                if PEER_BEHAVIOR in s.needs and peer.steps[s.peer_step].cell is None:
                    raise ScenarioError(f"{where}: observed peer step has no cell")
                if self.timed and len(s.needs) > 2:
                    # the window input takes the third catalog slot
                    raise ScenarioError(f"{where}: timed steps take at most two inputs")

    @property
    def cfg(self):
        return HashingConfig(time_window=self.time_window)

    def peer(self, i):
        return 1 - i


def cell_input(cell) -> TriggerInput:
    """What a robot senses when it watches the other one stand in ``cell``."""
    return TriggerInput.sensor(H.hash256(H.join_fields("cell", *cell)))


def sensor_input(label: str) -> TriggerInput:
    return TriggerInput.sensor(label.encode("utf-8"))


def emit_token(completed_step: bytes, env_input: TriggerInput, decoded=None) -> bytes:
    """Token announcing ``completed_step``, bound to an environment snapshot.

    ``decoded`` is the set of step digests the emitter has decoded; emitting
    for any other step is refused.
    """
    if decoded is not None and completed_step not in decoded:
        raise ValueError("cannot emit a token for a step that was not decoded")
    return compose_trigger([TriggerInput.token(completed_step), env_input])


# -- compiler -------------------------------------------------------------

@dataclass
class CompiledMission:
    spec: MutualMissionSpec
    graphs: list                  # per robot EncodedInstructionGraph (a path)
    triggers: list                # per robot, per step: plaintext inputs (compiler only)
    tokens: dict                  # (robot, step) -> token emitted after that step
    announce: list                # per robot: {step: cell of the consuming peer step or None}


def compile_mission(spec: MutualMissionSpec) -> CompiledMission:
    """Mission author's side: knows both halves and every environment input."""
    n = [len(r.steps) for r in spec.robots]
    digests = [[None] * k for k in n]
    triggers = [[None] * k for k in n]
    tokens = {}
    slot = TriggerInput.window(spec.start_time, spec.cfg)

    def step_digest(i, k, trail=()):
        if digests[i][k] is not None:
            return digests[i][k]
        if (i, k) in trail:
            raise ScenarioError(f"circular dependency through {spec.robots[i].name} step {k}")
        s = spec.robots[i].steps[k]
        ins = []
        for kind in s.needs:
            if kind == OWN:
                ins.append(sensor_input(s.sensor))
            elif kind == PEER_TOKEN:
                ins.append(TriggerInput.token(token_of(1 - i, s.peer_step, trail + ((i, k),))))
            else:
                ins.append(cell_input(spec.robots[1 - i].steps[s.peer_step].cell))
        if spec.timed:
            ins.append(slot)
        triggers[i][k] = ins
        digests[i][k] = compose_trigger(ins)
        return digests[i][k]

    def token_of(i, k, trail=()):
        if (i, k) not in tokens:
            d = step_digest(i, k, trail)
            tokens[(i, k)] = emit_token(d, sensor_input(spec.robots[i].steps[k].sensor))
        return tokens[(i, k)]

    for i in range(2):
        for k in range(n[i]):
            step_digest(i, k)
    announce = [{}, {}]
    for i in range(2):
        for k, s in enumerate(spec.robots[i].steps):
            if PEER_TOKEN in s.needs:
                token_of(1 - i, s.peer_step)
                announce[1 - i][s.peer_step] = s.cell
    if set(digests[0]) & set(digests[1]):
        raise ScenarioError("the two mission halves share a step digest")
    graphs = [EncodedInstructionGraph(list(d), [(k, k + 1, ZERO_DIGEST) for k in range(len(d) - 1)])
              for d in digests]
    return CompiledMission(spec, graphs, triggers, tokens, announce)


def _check_schedulable(spec: MutualMissionSpec):
    """Reject halves that wait on each other in a loop (each step follows
    the previous own step and the peer step it depends on)."""
    state = {}

    def visit(node):
        if state.get(node) == 2:
            return
        if state.get(node) == 1:
            raise ScenarioError(f"steps wait on each other: {spec.robots[node[0]].name} step {node[1]}")
        state[node] = 1
        i, k = node
        if k > 0:
            visit((i, k - 1))
        s = spec.robots[i].steps[k]
        if s.peer_step is not None:
            visit((1 - i, s.peer_step))
        state[node] = 2

    for i, r in enumerate(spec.robots):
        for k in range(len(r.steps)):
            visit((i, k))


# -- channel --------------------------------------------------------------

@dataclass(frozen=True)
class TokenEnvelope:
    sender: str
    seq: int
    token: bytes
    sent: float

    def __post_init__(self):
        if not (isinstance(self.token, bytes) and len(self.token) == H.DIGEST_SIZE):
            raise ValueError("an envelope carries exactly one 32-byte token")


@dataclass(frozen=True)
class Attack:
    """Tamper with every copy of the token one robot's step depends on."""
    kind: str
    robot: str                 # the receiving robot
    step: int                  # its step that needs the token
    lag: int = 0               # replay: rounds until the recorded copy is resent

    def __post_init__(self):
        if self.kind not in ATTACKS:
            raise ScenarioError(f"unknown attack {self.kind!r}")
        if self.lag < 0:
            raise ScenarioError("lag must be >= 0")


@dataclass(frozen=True)
class ChannelModel:
    delay: tuple = (1, 1)      # uniform integer rounds, inclusive
    drop: float = 0.0
    attacks: tuple = ()
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.delay
        if not (isinstance(lo, int) and isinstance(hi, int) and 1 <= lo <= hi):
            raise ScenarioError("delay must be integer rounds with 1 <= min <= max")
        if not 0.0 <= self.drop < 1.0:
            raise ScenarioError("drop must be in [0, 1)")


class Channel:
    """Deterministic delivery under a ChannelModel; records a transcript."""

    def __init__(self, model: ChannelModel, targets=None):
        self.model = model
        self.rng = np.random.default_rng([model.seed, 7])
        # (sender, seq) -> Attack, resolved by the scheduler
        self.targets = targets or {}
        self.queue = []            # (deliver round, order, recipient, envelope)
        self.transcript = []
        self.history = {}          # sender -> tokens seen on the wire, in order
        self._order = 0
        self._replayed = set()

    def send(self, rnd, env: TokenEnvelope, recipient):
        m = self.model
        lo, hi = m.delay
        delay = int(self.rng.integers(lo, hi + 1))
        dropped = bool(self.rng.random() < m.drop)
        tok, corrupted = env.token, False
        att = self.targets.get((env.sender, env.seq))
        if att is not None:
            corrupted = True
            if att.kind == "corrupt":
                bit = int(self.rng.integers(0, 8 * H.DIGEST_SIZE))
                b = bytearray(tok)
                b[bit // 8] ^= 1 << (bit % 8)
                tok = bytes(b)
            elif att.kind == "forge":
                tok = self.rng.bytes(H.DIGEST_SIZE)
            elif att.lag > 0:
                # recorded now, fresh copies suppressed, played back later
                key = (env.sender, env.seq)
                if key not in self._replayed:
                    self._replayed.add(key)
                    self._push(rnd + att.lag, recipient, env)
                dropped = True
            else:
                seen = self.history.get(env.sender, [])
                old = [t for t in seen if t != tok]
                tok = old[-1] if old else bytes(H.DIGEST_SIZE)
        self.history.setdefault(env.sender, []).append(env.token)
        delivered = not dropped
        if delivered:
            self._push(rnd + delay, recipient, TokenEnvelope(env.sender, env.seq, tok, env.sent))
        self.transcript.append((rnd, env.sender, env.seq, tok.hex(), int(delivered), int(corrupted)))

    def _push(self, when, recipient, env):
        self.queue.append((when, self._order, recipient, env))
        self._order += 1

    def deliver(self, rnd):
        due = sorted(q for q in self.queue if q[0] <= rnd)
        self.queue = [q for q in self.queue if q[0] > rnd]
        out = {}
        for _, _, r, env in due:
            out.setdefault(r, []).append(env)
        return out

    def pending(self):
        return bool(self.queue)


# -- robots ---------------------------------------------------------------

@dataclass
class Observation:
    """What a robot sees of the world this round."""
    t: float
    peer_cell: tuple
    peer_done: bool


@dataclass
class Agent:
    name: str
    graph: EncodedInstructionGraph
    recipes: tuple                 # its own step recipes (sensor labels, cells)
    announce: dict                 # step -> ack cell
    cfg: HashingConfig
    timed: bool = False
    skew: int = 1
    start_cell: tuple = (0, 0)
    state: MissionState = field(default_factory=MissionState)
    tokens: list = field(default_factory=list)
    seen: set = field(default_factory=set)
    outgoing: dict = field(default_factory=dict)   # seq -> [token, last round, ack cell, acked]
    next_seq: int = 0
    _last: tuple = None

    @property
    def progress(self):
        return len(self.state.decoded)

    @property
    def done(self):
        return self.progress == self.graph.n

    @property
    def cell(self):
        for k in range(self.progress - 1, -1, -1):
            if self.recipes[k].cell is not None:
                return self.recipes[k].cell
        return tuple(self.start_cell)

    def inputs(self, obs: Observation):
        ins = []
        if not self.done:
            ins.append(sensor_input(self.recipes[self.progress].sensor))
        ins.append(cell_input(obs.peer_cell))
        ins += self.tokens
        if self.timed:
            w = H.window_index(obs.t, self.cfg)
            ins += [TriggerInput("w", k) for k in range(w - self.skew, w + self.skew + 1)]
        return ins


def step_protocol(agent: Agent, inbox, obs: Observation, rnd: int, retransmit_every=5):
    """One round for one robot: take in envelopes, try to advance, emit.

    Returns the agent and the envelopes it sends this round.
    """
    for env in inbox:
        key = (env.sender, env.seq)
        if key in agent.seen:
            continue   # duplicate or replayed sequence number
        agent.seen.add(key)
        agent.tokens.append(TriggerInput.token(env.token))
    outbox = []
    while not agent.done:
        ins = agent.inputs(obs)
        key = (agent.progress, tuple(i.serialize() for i in ins))
        if key == agent._last:
            break
        agent._last = key
        before = agent.progress
        agent.state, dec = try_advance(agent.state, agent.graph, ins)
        if not dec:
            break
        for j in dec:
            used = dict(agent.state.history)[j]
            agent.tokens = [t for t in agent.tokens if t not in used]
            if j in agent.announce:
                tok = emit_token(agent.graph.nodes[j], sensor_input(agent.recipes[j].sensor),
                                 {agent.graph.nodes[k] for k in agent.state.decoded})
                seq = agent.next_seq
                agent.next_seq += 1
                agent.outgoing[seq] = [tok, rnd, agent.announce[j], False]
                outbox.append(TokenEnvelope(agent.name, seq, tok, obs.t))
        if agent.progress == before:
            break
    for seq, rec in agent.outgoing.items():
        tok, last, ack_cell, acked = rec
        if not acked and (obs.peer_done or (ack_cell is not None and obs.peer_cell == ack_cell)):
            rec[3] = acked = True
        if not acked and rnd - last >= retransmit_every:
            rec[1] = rnd
            outbox.append(TokenEnvelope(agent.name, seq, tok, obs.t))
    return agent, outbox


# -- scheduler ------------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    status: str                # "completed" or "stalled"
    robot: str | None = None
    step: int | None = None

    def __str__(self):
        return self.status if self.status == "completed" else f"stalled-at-step-{self.step}"


@dataclass
class ProtocolResult:
    verdict: Verdict
    rounds: int
    transcript: list
    agents: list
    false_decodes: int

    def transcript_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRANSCRIPT_HEADER)
        for row in self.transcript:
            w.writerow(row)
        return buf.getvalue()

    @property
    def envelopes(self):
        """Distinct (sender, seq) messages put on the wire."""
        return len({(r[1], r[2]) for r in self.transcript})


def make_agents(cm: CompiledMission):
    spec = cm.spec
    return [Agent(r.name, cm.graphs[i], r.steps, cm.announce[i], spec.cfg, spec.timed,
                  spec.skew, tuple(r.start_cell)) for i, r in enumerate(spec.robots)]


def resolve_attacks(cm: CompiledMission, attacks):
    """Map each attack to the (sender, seq) of the message it hits."""
    spec = cm.spec
    names = [r.name for r in spec.robots]
    out = {}
    for a in attacks:
        if a.robot not in names:
            raise ScenarioError(f"attack names unknown robot {a.robot!r}")
        i = names.index(a.robot)
        steps = spec.robots[i].steps
        if not 0 <= a.step < len(steps) or PEER_TOKEN not in steps[a.step].needs:
            raise ScenarioError(f"{a.robot} step {a.step} takes no peer token")
        sender = 1 - i
        seq = sorted(cm.announce[sender]).index(steps[a.step].peer_step)
        out[(names[sender], seq)] = a
    return out


def run_protocol(spec: MutualMissionSpec, channel: ChannelModel, max_rounds=500,
                 round_period=0.1, retransmit_every=5, stall_rounds=100):
    """Lockstep rounds until both halves are decoded, or nothing has moved
    for ``stall_rounds`` with no envelope still in flight."""
    _check_schedulable(spec)
    cm = compile_mission(spec)
    agents = make_agents(cm)
    ch = Channel(channel, resolve_attacks(cm, channel.attacks))
    names = [a.name for a in agents]
    rnd = last_move = 0
    for rnd in range(max_rounds):
        t = spec.start_time + rnd * round_period
        mail = ch.deliver(rnd)
        # both robots look at each other before either moves
        obs = [Observation(t, agents[1 - i].cell, agents[1 - i].done) for i in range(2)]
        before = [a.progress for a in agents]
        for i, a in enumerate(agents):
            _, out = step_protocol(a, mail.get(a.name, []), obs[i], rnd, retransmit_every)
            for env in out:
                ch.send(rnd, env, names[1 - i])
        if all(a.done for a in agents):
            break
        if [a.progress for a in agents] != before:
            last_move = rnd
        elif rnd - last_move >= stall_rounds and not ch.pending():
            break
    verdict = Verdict("completed") if all(a.done for a in agents) else _stall(cm, agents)
    return ProtocolResult(verdict, rnd + 1, ch.transcript, agents, _false_decodes(cm, agents))


def _stall(cm, agents):
    """Name the robot whose blocking step lacks only what the channel lost:
    its peer has already finished the step it waits for."""
    blocked = [(i, a.progress) for i, a in enumerate(agents) if not a.done]
    for i, k in blocked:
        s = cm.spec.robots[i].steps[k]
        if s.peer_step is not None and agents[1 - i].progress > s.peer_step:
            return Verdict("stalled", agents[i].name, k)
    i, k = blocked[0]
    return Verdict("stalled", agents[i].name, k)


def _false_decodes(cm, agents):
    """Decoded steps whose inputs differ from what the author intended."""
    bad = 0
    for i, a in enumerate(agents):
        for j, combo in a.state.history:
            want = [x.serialize() for x in cm.triggers[i][j]]
            if [x.serialize() for x in combo] != want:
                bad += 1
    return bad


# -- scenario files -------------------------------------------------------

def _recipe(d, where):
    if not isinstance(d, dict) or not isinstance(d.get("sensor"), str):
        raise ScenarioError(f"{where}: step needs a sensor label")
    for key in d:
        if key not in ("sensor", "needs", "peer_step", "cell"):
            raise ScenarioError(f"{where}: unexpected field {key!r}")
    try:
        return StepRecipe(d["sensor"], tuple(d.get("needs", [OWN])), d.get("peer_step"),
                          d.get("cell"))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {exc}") from None


def scenario_from_dict(obj):
    """(spec, channel model, run options) from a scenario object."""
    if not isinstance(obj, dict):
        raise ScenarioError("scenario must be an object")
    robots = obj.get("robots")
    if not isinstance(robots, list):
        raise ScenarioError("robots must be an array")
    rs = []
    for n, r in enumerate(robots):
        if not isinstance(r, dict) or not isinstance(r.get("name"), str) \
                or not isinstance(r.get("steps"), list):
            raise ScenarioError(f"robots[{n}] needs a name and a steps array")
        steps = tuple(_recipe(s, f"robots[{n}].steps[{k}]") for k, s in enumerate(r["steps"]))
        rs.append(RobotSpec(r["name"], steps, tuple(r.get("start_cell", (0, 0)))))
    spec = MutualMissionSpec(tuple(rs), bool(obj.get("timed", False)), int(obj.get("skew", 1)),
                             float(obj.get("time_window", 10.0)), float(obj.get("start_time", 0.0)))
    c = obj.get("channel", {})
    if not isinstance(c, dict):
        raise ScenarioError("channel must be an object")
    try:
        attacks = tuple(Attack(a["type"], a["robot"], int(a["step"]), int(a.get("lag", 0)))
                        for a in c.get("attacks", []))
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"bad attack entry: {exc}") from None
    delay = c.get("delay", [1, 1])
    model = ChannelModel(tuple(delay), float(c.get("drop", 0.0)), attacks, int(obj.get("seed", 0)))
    opts = {k: obj[k] for k in ("max_rounds", "round_period", "retransmit_every") if k in obj}
    return spec, model, opts


def load_scenario(path):
    with open(path, encoding="utf-8") as f:
        try:
            obj = json.load(f)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"invalid JSON: {exc.msg} at char {exc.pos}") from None
    return scenario_from_dict(obj)


def inspection_scenario(drop=0.0, attacks=(), seed=0, timed=False, delay=(1, 2)):
    """Two robots inspecting a row of shelves from either side.

    A opens each bay, B checks it; A can only close the row once it has
    B's report and sees B standing at the last bay it checked.
    """
    a = [
        {"sensor": "A:dock", "cell": [0, 0]},
        {"sensor": "A:bay-1 open", "cell": [1, 0]},
        {"sensor": "A:bay-2 open", "needs": [OWN, PEER_TOKEN], "peer_step": 1, "cell": [2, 0]},
        {"sensor": "A:row closed", "needs": [PEER_TOKEN, PEER_BEHAVIOR], "peer_step": 2,
         "cell": [3, 0]},
    ]
    b = [
        {"sensor": "B:dock", "cell": [0, 5]},
        {"sensor": "B:bay-1 ok", "needs": [OWN, PEER_TOKEN], "peer_step": 1, "cell": [1, 5]},
        {"sensor": "B:bay-2 ok", "needs": [OWN, PEER_TOKEN], "peer_step": 2, "cell": [2, 5]},
        {"sensor": "B:home", "needs": [OWN, PEER_TOKEN], "peer_step": 3, "cell": [3, 5]},
    ]
    return {
        "robots": [{"name": "A", "steps": a}, {"name": "B", "steps": b, "start_cell": [0, 5]}],
        "timed": timed, "skew": 1, "time_window": 10.0, "start_time": 0.0,
        "channel": {"delay": list(delay), "drop": drop, "attacks": list(attacks)},
        "seed": seed, "max_rounds": 600, "round_period": 0.1, "retransmit_every": 5,
    }


def run_scenario(obj, seed=None):
    spec, model, opts = scenario_from_dict(obj)
    if seed is not None:
        model = ChannelModel(model.delay, model.drop, model.attacks, seed)
    return run_protocol(spec, model, **opts)

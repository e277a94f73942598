import json

import pytest
from hypothesis import given, settings, strategies as st

from hashnav.instruction_graph import TriggerInput, MissionState, compose_trigger, try_advance
from hashnav.multi_robot import (
    ChannelModel, MutualMissionSpec, RobotSpec, StepRecipe, ScenarioError, TRANSCRIPT_HEADER,
    compile_mission, emit_token, inspection_scenario, load_scenario, run_protocol, run_scenario,
    scenario_from_dict, sensor_input,
)


def test_emit_token_is_a_function_of_step_and_environment():
    s = compose_trigger([sensor_input("x")])
    e1, e2 = sensor_input("light on"), sensor_input("light off")
    assert emit_token(s, e1) == emit_token(s, e1)
    assert emit_token(s, e1) != emit_token(s, e2)
    assert emit_token(s, e1) == compose_trigger([TriggerInput.token(s), e1])
    with pytest.raises(ValueError):
        emit_token(s, e1, decoded=set())


def test_compiler_tokens_match_what_robots_emit():
    r = run_scenario(inspection_scenario())
    cm = compile_mission(scenario_from_dict(inspection_scenario())[0])
    sent = {(row[1], row[2]): row[3] for row in r.transcript}
    # A announces steps 1, 2, 3 in order; B announces 1, 2
    for (i, k), tok in cm.tokens.items():
        name = "AB"[i]
        seq = sorted(cm.announce[i]).index(k)
        assert sent[(name, seq)] == tok.hex()


def test_honest_run_completes_with_one_envelope_per_dependency():
    r = run_scenario(inspection_scenario())
    assert str(r.verdict) == "completed"
    needs_token = sum("peer_token" in s.get("needs", []) for rb in inspection_scenario()["robots"]
                      for s in rb["steps"])
    assert r.envelopes == needs_token == len(r.transcript)
    assert r.false_decodes == 0


def test_halves_are_disjoint():
    r = run_scenario(inspection_scenario())
    a, b = r.agents
    assert not set(a.graph.nodes) & set(b.graph.nodes)
    assert all(0 <= j < a.graph.n for j in a.state.decoded)


@pytest.mark.parametrize("kind", ["corrupt", "forge", "replay"])
@pytest.mark.parametrize("robot,step", [("B", 2), ("A", 2), ("B", 1)])
def test_tampered_token_stalls_at_the_dependent_step(kind, robot, step):
    r = run_scenario(inspection_scenario(attacks=[{"type": kind, "robot": robot, "step": step}]))
    assert str(r.verdict) == f"stalled-at-step-{step}"
    assert r.verdict.robot == robot
    assert r.false_decodes == 0
    stuck = [a for a in r.agents if a.name == robot][0]
    assert stuck.progress == step


@pytest.mark.parametrize("seed", range(10))
def test_lossy_channel_completes_with_retransmission(seed):
    base = run_scenario(inspection_scenario(seed=seed))
    r = run_scenario(inspection_scenario(drop=0.2, seed=seed))
    assert str(r.verdict) == "completed"
    assert r.rounds <= 10 * base.rounds
    assert r.false_decodes == 0


def test_late_replay_rejected_only_with_timed_tokens():
    att = [{"type": "replay", "robot": "B", "step": 2, "lag": 300}]
    assert str(run_scenario(inspection_scenario(attacks=att)).verdict) == "completed"
    r = run_scenario(inspection_scenario(attacks=att, timed=True))
    assert str(r.verdict) == "stalled-at-step-2"
    assert str(run_scenario(inspection_scenario(timed=True)).verdict) == "completed"


def test_transcript_is_deterministic():
    sc = inspection_scenario(drop=0.3, delay=(1, 4), seed=3)
    a, b = run_scenario(sc).transcript_csv(), run_scenario(sc).transcript_csv()
    assert a == b
    assert a.splitlines()[0].split(",") == TRANSCRIPT_HEADER
    assert a != run_scenario(sc, seed=4).transcript_csv()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.binary(min_size=32, max_size=32), min_size=1, max_size=4))
def test_fuzzed_peer_tokens_never_decode(tokens):
    cm = compile_mission(scenario_from_dict(inspection_scenario())[0])
    # B with its own sensors and A in view, but only forged tokens
    g = cm.graphs[1]
    s, _ = try_advance(MissionState(), g, [sensor_input("B:dock")])
    ins = [sensor_input("B:bay-1 ok"), *map(TriggerInput.token, tokens)]
    s2, dec = try_advance(s, g, ins)
    assert dec == [] and s2.decoded == {0}


def test_scenario_validation(tmp_path):
    sc = inspection_scenario()
    p = tmp_path / "s.json"
    p.write_text(json.dumps(sc))
    spec, model, opts = load_scenario(p)
    assert [r.name for r in spec.robots] == ["A", "B"] and opts["max_rounds"] == 600
    bad = json.loads(json.dumps(sc))
    bad["robots"][0]["steps"][2]["peer_step"] = 9
    with pytest.raises(ScenarioError):
        scenario_from_dict(bad)
    bad = json.loads(json.dumps(sc))
    bad["robots"][1]["steps"][0]["needs"] = ["telepathy"]
    with pytest.raises(ScenarioError):
        scenario_from_dict(bad)
    bad = json.loads(json.dumps(sc))
    bad["channel"]["drop"] = 1.5
    with pytest.raises(ScenarioError):
        scenario_from_dict(bad)
    p.write_text("{not json")
    with pytest.raises(ScenarioError):
        load_scenario(p)


def test_mutual_wait_is_rejected():
    a = RobotSpec("A", (StepRecipe("a0", ("own_sensor", "peer_token"), 0),))
    b = RobotSpec("B", (StepRecipe("b0", ("own_sensor", "peer_token"), 0),))
    with pytest.raises(ScenarioError):
        run_protocol(MutualMissionSpec((a, b)), ChannelModel())

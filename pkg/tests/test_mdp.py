import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from ltlsynth.mdp import (MDP, LabeledMDP, ModelError, SchemaError, StationaryPolicy, horizon_for, load_mdp,
                          mdp_to_dict, monte_carlo_return, policy_value, save_mdp, simulate)
from ltlsynth.scenarios import build_example1, build_nursery


def loop(r=1.0, gamma=0.9):
    return MDP(("s",), {"s": ("a",)}, {("s", "a"): {"s": 1.0}}, {("s", "a"): r}, "s", gamma)


def test_geometric_value():
    v = policy_value(loop(), StationaryPolicy.deterministic({"s": "a"}), tol=1e-12)
    assert abs(v["s"] - 10.0) <= 1e-10


def test_zero_reward_zero_value():
    m = build_example1(rewards={})
    pol = StationaryPolicy.deterministic({s: "go" for s in m.states})
    assert all(abs(v) < 1e-12 for v in policy_value(m, pol).values())


def test_value_matches_dense_solve_example_grid():
    m = build_example1()
    for acts in (("go", "rest"), ("rest", "go"), ("go", "go")):
        choice = {s: acts[k % 2] for k, s in enumerate(m.states)}
        v = policy_value(m, StationaryPolicy.deterministic(choice), tol=1e-10)
        assert abs(v[m.initial] - oracles.dense_value(m, choice)) <= 1e-8


@st.composite
def random_mdps(draw):
    n = draw(st.integers(1, 8))
    states = [f"s{i}" for i in range(n)]
    actions, trans, rewards = {}, {}, {}
    for s in states:
        k = draw(st.integers(1, 3))
        actions[s] = tuple(f"a{j}" for j in range(k))
        for a in actions[s]:
            w = np.array(draw(st.lists(st.floats(0.0, 1.0), min_size=n, max_size=n))) + 1e-3
            w = w / w.sum()
            trans[(s, a)] = {t: float(p) for t, p in zip(states, w)}
            rewards[(s, a)] = draw(st.floats(-5.0, 5.0))
    gamma = draw(st.floats(0.1, 0.95))
    return MDP(tuple(states), actions, trans, rewards, states[0], gamma)


@settings(max_examples=50, deadline=None)
@given(random_mdps(), st.randoms(use_true_random=False))
def test_value_iteration_matches_linear_solve(m, rnd):
    choice = {s: rnd.choice(m.actions[s]) for s in m.states}
    v = policy_value(m, StationaryPolicy.deterministic(choice), tol=1e-10)
    assert abs(v[m.initial] - oracles.dense_value(m, choice)) <= 1e-8


def test_simulation_examples():
    rec = simulate(loop(), StationaryPolicy.deterministic({"s": "a"}), 200, seed=3)
    assert abs(rec.discounted_return - 10 * (1 - 0.9 ** 200)) <= 1e-8
    assert abs(rec.recompute_return() - rec.discounted_return) <= 1e-12
    m = build_example1()
    rest = StationaryPolicy.deterministic({s: "rest" for s in m.states})
    rec = simulate(m, rest, 50, seed=1)
    assert set(rec.states) == {"III"}
    det = build_example1(p=0.5)
    a = simulate(det, rest, 20, seed=1)
    b = simulate(det, rest, 20, seed=99)
    assert a.states == b.states


def test_simulation_is_reproducible_and_respects_actions():
    m = build_example1()
    pol = StationaryPolicy({s: {"go": 0.5, "rest": 0.5} for s in m.states})
    a = simulate(m, pol, 100, seed=5)
    b = simulate(m, pol, 100, seed=5)
    assert a == b
    assert all(act in m.actions[s] for s, act in zip(a.states, a.actions))


def test_monte_carlo_within_three_standard_errors():
    m = build_example1()
    choice = {"I": "rest", "II": "rest", "III": "go", "IV": "rest"}
    pol = StationaryPolicy.deterministic(choice)
    v = policy_value(m, pol, tol=1e-10)[m.initial]
    mc = monte_carlo_return(m, pol, 10_000, horizon_for(m.gamma, 1e-6), seed=2)
    assert mc.consistent_with(v)


def test_horizon_for():
    H = horizon_for(0.9, 1e-8)
    assert 0.9 ** H < 1e-8 <= 0.9 ** (H - 1)


def test_invalid_models_are_rejected():
    with pytest.raises(ModelError):
        MDP(("s",), {"s": ("a",)}, {("s", "a"): {"s": 0.99}}, {}, "s", 0.9)
    with pytest.raises(ModelError):
        loop(gamma=1.0)
    with pytest.raises(ModelError):
        LabeledMDP(("s",), {"s": ("a",)}, {("s", "a"): {"s": 1.0}}, {}, "s", 0.9, ap={"p"}, labels={"s": {"q"}})
    with pytest.raises(ModelError):
        StationaryPolicy.deterministic({"s": "b"}).check(loop())


def test_json_round_trip(tmp_path):
    m = build_example1()
    save_mdp(m, tmp_path / "m.json")
    back = load_mdp(tmp_path / "m.json")
    assert back.states == m.states and back.labels == m.labels
    assert all(back.transitions[k] == m.transitions[k] for k in m.transitions)
    assert all(len(back.actions[s]) == 2 for s in back.states)
    n = build_nursery()
    save_mdp(n, tmp_path / "n.json")
    nb = load_mdp(tmp_path / "n.json")
    assert len(nb.states) == 20 and all(len(nb.actions[s]) == 4 for s in nb.states)


def test_row_sum_error_names_pair(tmp_path):
    data = mdp_to_dict(build_example1())
    data["actions"][0]["transitions"][0]["prob"] -= 0.01
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(data))
    with pytest.raises((ModelError, SchemaError)) as err:
        load_mdp(path)
    s, a = data["actions"][0]["state"], data["actions"][0]["action"]
    assert s in str(err.value) and a in str(err.value)


def test_unknown_label_rejected():
    data = mdp_to_dict(build_example1())
    data["states"][0]["label"] = ["nope"]
    from ltlsynth.mdp import mdp_from_dict
    with pytest.raises(SchemaError):
        mdp_from_dict(data)


def test_value_bounded_by_reward_range():
    m = build_example1()
    pol = StationaryPolicy.deterministic({s: "go" for s in m.states})
    rmax = max(abs(r) for r in m.rewards.values())
    assert all(abs(v) <= rmax / (1 - m.gamma) + 1e-9 for v in policy_value(m, pol).values())
    assert math.isclose(m.gamma, 0.9)

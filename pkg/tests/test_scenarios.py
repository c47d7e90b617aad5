import json
import math

import pytest

from ltlsynth.mdp import SchemaError
from ltlsynth.scenarios import (BUILTIN, GridSpec, build_example1, build_nursery, build_safe_motion,
                                builtin_ldba, cell_id, load_scenario, safe_motion_rewards)


def rows_are_distributions(m):
    return all(abs(math.fsum(m.transitions[(s, a)].values()) - 1.0) <= 1e-12 for s in m.states for a in m.actions[s])


def test_example_dynamics():
    m = build_example1(p=0.7)
    assert rows_are_distributions(m)
    assert m.transitions[("III", "rest")] == {"III": 1.0}
    go = m.transitions[("III", "go")]
    assert sorted(go.values()) == pytest.approx([0.3, 0.7])
    assert m.initial == "III"


def test_safe_motion_layout():
    m = build_safe_motion()
    assert len(m.states) == 10
    assert sum(len(m.actions[s]) for s in m.states) == 22
    assert rows_are_distributions(m)
    assert m.transitions[("0", "ul")]["4"] == pytest.approx(0.8)
    for s in m.states:
        assert len(m.labels[s]) <= 1
    assert sum("m" in m.labels[s] for s in m.states) == 3


@pytest.mark.parametrize("preset", ["ur", "ul", "ll"])
def test_presets_put_the_top_reward_in_their_quadrant(preset):
    r = safe_motion_rewards(preset)
    top = max(r, key=r.get)
    assert r[top] == 1.0 and top[1] == "rest"
    with pytest.raises(ValueError):
        safe_motion_rewards("zz")


def test_nursery_shape_and_rewards():
    a = build_nursery()
    assert len(a.states) == 20 and all(len(a.actions[s]) == 4 for s in a.states)
    assert rows_are_distributions(a)
    baby = next(s for s in a.states if "b" in a.labels[s])
    assert all(a.rewards[(baby, act)] == 10.0 for act in a.actions[baby])
    b = build_nursery(reward_mode="B")
    others = [s for s in b.states if s != baby]
    assert all(b.rewards[(s, "up")] == 1.0 for s in others)
    assert all(b.rewards[(s, "left")] == 2.0 for s in others)


def test_nursery_walls_bounce():
    m = build_nursery()
    corner = cell_id(0, 0)
    assert m.transitions[(corner, "down")][corner] >= 0.8


def test_invalid_parameters():
    with pytest.raises(ValueError):
        build_example1(p=1.0)
    with pytest.raises(ValueError):
        build_safe_motion(p=0.0)
    with pytest.raises(ValueError):
        build_nursery(locations={"a": (0, 0), "b": (0, 0), "c": (1, 1), "d": (2, 2)})
    with pytest.raises(ValueError):
        build_nursery(locations={"a": (9, 0), "b": (0, 1), "c": (1, 1), "d": (2, 2)})
    with pytest.raises(ValueError):
        build_nursery(reward_mode="C")
    with pytest.raises(ValueError):
        GridSpec("nowhere")


def test_builtin_automata():
    for name in BUILTIN:
        assert builtin_ldba(name).states
    with pytest.raises(ValueError):
        builtin_ldba("missing")


def test_scenario_file(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"model": "nursery", "width": 4, "height": 3, "reward_mode": "B",
                                "locations": {"a": [0, 2], "b": [3, 2], "c": [0, 0], "d": [2, 1]}}))
    spec = load_scenario(path)
    m = spec.build()
    assert len(m.states) == 12 and m.initial == cell_id(0, 0)
    path.write_text(json.dumps({"model": "nursery", "width": 0}))
    with pytest.raises(SchemaError):
        load_scenario(path)
    path.write_text(json.dumps({"model": "safe-motion", "rewards": [{"state": "1", "action": "rest", "reward": 3}]}))
    assert load_scenario(path).build().rewards == {("1", "rest"): 3.0}

import argparse
import json

import pytest

from ltlsynth.cli import EXIT_ASSUMPTION, EXIT_INPUT, EXIT_OK, main, parse_constraint
from ltlsynth.mdp import LabeledMDP, save_mdp


def run(*args):
    return main([str(a) for a in args])


def test_parse_constraint():
    c = parse_constraint("r=rw.json,gamma=0.9,d=-inf")
    assert c.path == "rw.json" and c.gamma == 0.9 and c.d == float("-inf")
    for bad in ("r=x,gamma=0.9", "r=x,gamma=0.9,d=1,e=2", "r=x,gamma=zz,d=1", "nonsense"):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_constraint(bad)


def test_synth_writes_verified_policy(tmp_path, capsys):
    out = tmp_path / "o"
    assert run("synth", "--scenario", "safe-motion", "--episodes", 200, "--out", out, "--render", "both") == EXIT_OK
    assert "objective 8.64" in capsys.readouterr().out
    for name in ("policy.json", "verification.json", "metrics.json", "policy.txt", "policy.svg"):
        assert (out / name).exists()
    ver = json.loads((out / "verification.json").read_text())
    assert ver["passed"] and ver["almost_sure"]
    assert (out / "policy.svg").read_text().lstrip().startswith("<svg")


def test_check_and_simulate(tmp_path, capsys):
    out = tmp_path / "o"
    assert run("check", "--scenario", "example1") == EXIT_OK
    assert "feasible" in capsys.readouterr().out
    assert run("synth", "--scenario", "example1", "--episodes", 0, "--out", out) == EXIT_OK
    sim = tmp_path / "s"
    assert run("simulate", "--scenario", "example1", "--policy", out / "policy.json", "--episodes", 300,
               "--steps", 200, "--out", sim, "--keep-runs", 2) == EXIT_OK
    summary = json.loads((sim / "simulation.json").read_text())
    assert summary["consistent"] and summary["episodes_entering"]["m"] == 0
    assert len((sim / "runs.jsonl").read_text().splitlines()) == 2


@pytest.fixture
def doomed(tmp_path):
    m = LabeledMDP(("s", "t"), {"s": ("a",), "t": ("a",)}, {("s", "a"): {"t": 1.0}, ("t", "a"): {"t": 1.0}},
                   {("t", "a"): 1.0}, "s", 0.9, ap={"l0", "l1", "m"}, labels={"t": {"m"}})
    path = tmp_path / "doomed.json"
    save_mdp(m, path)
    return path


def test_infeasible_reachability_exits_2(doomed, tmp_path, capsys):
    args = ("--mdp", doomed, "--automaton", "persist-l0-or-l1", "--out", tmp_path / "o")
    assert run("check", *args) == EXIT_ASSUMPTION
    assert "Assumption 1" in capsys.readouterr().out
    assert run("synth", *args, "--episodes", 0) == EXIT_ASSUMPTION
    assert "Assumption 1" in capsys.readouterr().err
    assert not (tmp_path / "o" / "policy.json").exists()


def test_bad_inputs_exit_1(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert run("check", "--mdp", broken, "--automaton", "persist-l0-or-l1") == EXIT_INPUT
    assert run("check", "--scenario", "example1", "--zeta", 1.5) == EXIT_INPUT
    assert run("check", "--scenario", "example1", "--mdp", broken) == EXIT_INPUT
    assert run("check", "--scenario", "example1", "--automaton", "no-such-automaton") == EXIT_INPUT
    with pytest.raises(SystemExit):
        run("synth", "--scenario", "example1", "--constraint", "r=x")


def test_constraint_from_file(tmp_path):
    rw = tmp_path / "r.json"
    rw.write_text(json.dumps({"rewards": [{"state": s, "action": "rest", "reward": 1.0} for s in ("4", "5")]}))
    out = tmp_path / "o"
    assert run("synth", "--scenario", "safe-motion", "--episodes", 0, "--deterministic", "--out", out,
               "--constraint", f"r={rw},gamma=0.9,d=5.0") == EXIT_OK
    metrics = json.loads((out / "metrics.json").read_text())
    policy = json.loads((out / "policy.json").read_text())
    first = next(c["action"] for c in policy["choices"] if c["mdp_state"] == "0" and c["memory"] == "0")
    assert first == "ul"
    assert (out / "timing.json").exists() and "wall_time_seconds" not in metrics

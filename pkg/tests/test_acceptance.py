"""End-to-end acceptance checks; each prints one PASS/FAIL line in the pytest summary.

Run with ``pytest tests/test_acceptance.py -v``. Set ``LTLSYNTH_NURSERY_AUTOMATON``
to an automaton JSON file to run the large-automaton branch of the scale check.
"""
import functools
import json
import math
import os
import random
import tempfile
import time
from pathlib import Path

import pytest

import oracles
from conftest import acceptance
from ltlsynth.automata import accepts_lasso, degeneralize, generalized_accepts_lasso, validate
from ltlsynth.cli import ConstraintArg, RunConfig, main, synthesize
from ltlsynth.ltl import parse_ltl
from ltlsynth.mdp import horizon_for, policy_value, simulate
from ltlsynth.product import (GOAL, build_absorbing, build_product, discounted_run_reward_equivalence_check,
                              is_eps, eps_target, project_policy)
from ltlsynth.policy import ProductPolicy, verify_policy
from ltlsynth.scenarios import (EXAMPLE1_AP, NURSERY_AP, QUADRANTS, build_example1, build_safe_motion,
                                persist_ldba, surveillance_ldgba, two_set_ldgba)
from ltlsynth.automata import LDGBA, Transition

PERSIST = "(F G l0 | F G l1) & G !m"
EXTERNAL_ENV = "LTLSYNTH_NURSERY_AUTOMATON"

# secondary reward for the constrained instance: resting in the ul or ll quadrant
SIDE_REWARD = {(c, "rest"): 1.0 for quad in ("ul", "ll") for c in QUADRANTS[quad][:2]}
SIDE_GAMMA = 0.9
SIDE_D = 5.0


@functools.lru_cache(maxsize=None)
def _side_file() -> str:
    path = Path(tempfile.mkdtemp(prefix="ltlsynth-side-")) / "side.json"
    doc = {"format_version": 1, "rewards": [{"state": s, "action": a, "reward": r}
                                            for (s, a), r in sorted(SIDE_REWARD.items())]}
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


@functools.lru_cache(maxsize=None)
def solved(key: str):
    """Solve one named instance once per session; returns ``(result, seconds)``."""
    kw = dict(episodes=0, deterministic=True)
    if key == "example1":
        cfg = RunConfig(scenario="example1", **kw)
    elif key.startswith("safe-motion:"):
        cfg = RunConfig(scenario="safe-motion", reward_preset=key.split(":")[1], **kw)
    elif key == "safe-motion-constrained":
        cfg = RunConfig(scenario="safe-motion", reward_preset="ur",
                        constraints=(ConstraintArg(_side_file(), SIDE_GAMMA, SIDE_D),), **kw)
    elif key.startswith("nursery:"):
        cfg = RunConfig(scenario="nursery", reward_mode=key.split(":")[1], **kw)
    else:
        raise KeyError(key)
    t0 = time.monotonic()
    res = synthesize(cfg)
    return res, time.monotonic() - t0


INSTANCES = ("example1", "safe-motion:ur", "safe-motion:ul", "safe-motion:ll",
             "safe-motion-constrained", "nursery:A", "nursery:B")


def _reached(p, choice):
    seen, stack = {p.initial}, [p.initial]
    while stack:
        s = stack.pop()
        for t in p.transitions[(s, choice[s])]:
            if t not in seen:
                seen.add(t)
                stack.append(t)
    return seen


def _quadrant_policy(p, quad):
    v, h, _ = QUADRANTS[quad]
    choice = {("0", "0"): quad, (v, "0"): "eps:1", (v, "1"): "rest", (h, "0"): "eps:2", (h, "2"): "rest"}
    return ProductPolicy(choice, {}).stationary(p)


def test_safe_motion_reproduction():
    with acceptance(1, "safe-motion product, model size and quadrant choice") as out:
        picks = {}
        for preset in ("ur", "ul", "ll"):
            res, secs = solved(f"safe-motion:{preset}")
            assert res.status == "ok", res.message
            counts = res.metrics["model"]
            assert res.metrics["product"]["states_full"] == 30
            assert len(res.product.product_states) == 30
            assert counts["binary"] == 86
            assert counts["occupancy"] == 172
            assert res.solution.status == "optimal"
            assert secs <= 10.0, f"solve took {secs:.1f} s"
            p, choice = res.product, res.policy.choice
            first = choice[p.initial]
            assert first in QUADRANTS
            for s in _reached(p, choice) - {p.initial}:
                a = choice[s]
                if is_eps(a):
                    a = choice[(s[0], eps_target(a))]
                assert a == "rest", f"{s} executes {a}"
            values = {q: policy_value(p, _quadrant_policy(p, q), tol=1e-11)[p.initial] for q in QUADRANTS}
            best = max(values, key=values.get)
            assert first == best
            assert abs(values[first] - res.solution.objective) <= 1e-6
            picks[preset] = first
            if preset == "ur":
                out.detail = (f"30 product states, {counts['binary']} binaries, {counts['occupancy']} occupancy "
                              f"variables, objective {res.solution.objective:.6g} in {secs:.2f} s")
        assert picks == {"ur": "ur", "ul": "ul", "ll": "ll"}, picks
        out.detail += f"; presets ur/ul/ll pick {picks['ur']}/{picks['ul']}/{picks['ll']}"


def test_exhaustive_oracle_example_grid():
    with acceptance(2, "four-cell grid MILP optimum equals exhaustive policy enumeration") as out:
        res, secs = solved("example1")
        assert res.status == "ok", res.message
        p = build_product(build_example1(), persist_ldba(), reachable_only=False)
        assert len(p.product_states) == 12
        z = build_absorbing(p, 0.9)
        best, _, admissible, total = oracles.best_product_policy(p, z, GOAL, literal=True)
        best_b, _, _, _ = oracles.best_product_policy(p, z, GOAL)
        assert abs(best - best_b) <= 1e-12
        assert abs(res.solution.objective - best) <= 1e-6
        choice = {s: a for s, a in res.policy.choice.items() if s in _reached(res.product, res.policy.choice)}
        attained = oracles.dense_value(res.product, choice)
        assert abs(attained - best) <= 1e-6
        assert secs <= 60.0
        out.detail = (f"oracle {best:.9g} over {total} policies ({admissible} almost-sure), MILP "
                      f"{res.solution.objective:.9g}, extracted policy {attained:.9g}, {secs:.2f} s")


def _gf_bc() -> LDGBA:
    ap = {"b", "c"}
    edges = [("f", lab, "f") for lab in ("b & c", "b & !c", "!b & c", "!b & !c")]
    transitions = tuple(Transition(s, parse_ltl(lab, ap), t) for s, lab, t in edges)
    return LDGBA(frozenset(ap), ("i", "f"), "i", transitions, (("i", "f"),), (frozenset({0, 1}), frozenset({0, 2})))


def test_degeneralization():
    with acceptance(3, "degeneralization structure and language") as out:
        g = two_set_ldgba()
        qi, qf = validate(g).initial_states, validate(g).accepting_states
        d = degeneralize(g)
        assert len(d.states) == len(qi) + 2 * len(qf)
        acc = {(t.source, t.target) for i, t in enumerate(d.transitions) if i in d.accepting}
        assert acc == {("s@1", "s'@2"), ("t@1", "t'@2")}, acc
        edges = {(t.source, t.target) for t in d.transitions}
        assert ("u@2", "u'@1") in edges and ("u@1", "u'@1") in edges
        assert set(d.epsilon) == {("i", "s@1"), ("i", "t@1")}
        assert validate(d).ok
        gen = _gf_bc()
        deg = degeneralize(gen)
        rng = random.Random(3)
        mismatches = 0
        for _ in range(1000):
            w = oracles.random_lasso(rng, gen.ap)
            single = accepts_lasso(deg, w)
            if not (single == generalized_accepts_lasso(gen, w) == oracles.scc_accepts(gen, w)
                    == oracles.scc_accepts(deg, w)):
                mismatches += 1
        assert mismatches == 0
        out.detail = f"{len(d.states)} = |Qi| + 2|Qf| states, F' as expected, 0/1000 lasso mismatches"


def test_automaton_matches_formula():
    with acceptance(4, "persistence automaton agrees with its formula") as out:
        a = persist_ldba()
        f = parse_ltl(PERSIST, EXAMPLE1_AP)
        rng = random.Random(4)
        mismatches = 0
        accepted = 0
        for _ in range(1000):
            w = oracles.random_lasso(rng, EXAMPLE1_AP, 4, 4)
            got = accepts_lasso(a, w)
            accepted += got
            if not (got == oracles.lasso_truth(f, w) == oracles.scc_accepts(a, w)):
                mismatches += 1
        from ltlsynth.ltl import eval_lasso
        rng = random.Random(4)
        for _ in range(1000):
            w = oracles.random_lasso(rng, EXAMPLE1_AP, 4, 4)
            mismatches += accepts_lasso(a, w) != eval_lasso(f, w)
        assert mismatches == 0
        assert 0 < accepted < 1000
        out.detail = f"0/1000 mismatches ({accepted} accepted words)"


def test_product_reward_equivalence():
    with acceptance(5, "product and projected run rewards agree") as out:
        worst = []
        for m in (build_example1(), build_safe_motion()):
            H = horizon_for(m.gamma, 1e-8)
            rep = discounted_run_reward_equivalence_check(m, persist_ldba(), 1000, H, seed=5)
            rmax = max(abs(m.reward(s, a)) for s, a in m.pairs())
            slack = m.gamma ** H * rmax / (1.0 - m.gamma)
            assert rep.max_deviation <= 1e-6 + slack
            assert rep.runs_with_epsilon > 0
            worst.append(rep.max_deviation)
        out.detail = f"max deviation {max(worst):.2e} over 2 x 1000 runs"


def test_verification_consistency():
    with acceptance(7, "objective, exact value, absorption and Monte-Carlo agree") as out:
        parts = []
        for key in ("safe-motion:ur", "example1"):
            res, _ = solved(key)
            p = res.product
            z = build_absorbing(p, 0.9)
            rep = verify_policy(res.policy, p, z, res.solution.objective, episodes=10_000, seed=7)
            assert abs(rep.value - res.solution.objective) <= 1e-6
            assert rep.absorption >= 1.0 - 1e-9
            choice = {s: a for s, a in res.policy.choice.items()}
            zc = {s: choice.get(s, z.actions[s][0]) for s in z.states}
            reach = _reached(z, zc)
            dense = oracles.dense_absorption(z, {s: zc[s] for s in reach}, GOAL)
            assert dense >= 1.0 - 1e-9
            assert abs(rep.mc_mean - rep.value) <= 3 * rep.mc_std_error + rep.mc_truncation
            parts.append(f"{key}: value {rep.value:.6g}, absorption {rep.absorption:.12g}, "
                         f"MC {rep.mc_mean:.4g} +- {rep.mc_std_error:.2g}")
        out.detail = "; ".join(parts)


def test_reward_constraint():
    with acceptance(8, "secondary reward constraint matches the constrained oracle") as out:
        free, _ = solved("safe-motion:ur")
        res, _ = solved("safe-motion-constrained")
        assert res.status == "ok", res.message
        p = res.product
        z = build_absorbing(p, 0.9)
        side = (SIDE_REWARD, SIDE_GAMMA, SIDE_D)
        # the unconstrained optimum must violate the side constraint
        fc = {s: a for s, a in free.policy.choice.items() if s in _reached(p, free.policy.choice)}
        free_side = oracles.dense_value(p, fc, gamma=SIDE_GAMMA, reward=oracles.lifted_reward(p, SIDE_REWARD, SIDE_GAMMA))
        assert free_side <= SIDE_D
        best, arg, admissible, _ = oracles.best_product_policy(p, z, GOAL, side=side)
        assert abs(res.solution.objective - best) <= 1e-6
        choice = {s: a for s, a in res.policy.choice.items() if s in _reached(p, res.policy.choice)}
        got_side = oracles.dense_value(p, choice, gamma=SIDE_GAMMA, reward=oracles.lifted_reward(p, SIDE_REWARD, SIDE_GAMMA))
        assert got_side > SIDE_D
        assert abs(oracles.dense_value(p, choice) - best) <= 1e-6
        assert abs(res.metrics["constraint_returns"][0] - got_side) <= 1e-6
        out.detail = (f"unconstrained {free.solution.objective:.6g} (side return {free_side:.3g} <= {SIDE_D}) "
                      f"excluded; constrained MILP {res.solution.objective:.9g} = oracle {best:.9g} over "
                      f"{admissible} feasible policies, picks {res.policy.choice[p.initial]}")


def _never_enters_d(res, episodes=1000, steps=300):
    m = res.product.mdp
    induced = project_policy(res.policy.choice, m, res.product.automaton)
    hits = 0
    for k in range(episodes):
        run = simulate(m, induced, steps, seed=9000 + k)
        hits += "d" in run.visits
    return hits


def test_scale_nursery():
    with acceptance(9, "nursery scale check") as out:
        external = os.environ.get(EXTERNAL_ENV)
        parts = []
        if external:
            cfg = RunConfig(scenario="nursery", automaton=external, width=5, height=5, time_limit=1800.0,
                            episodes=0, deterministic=True)
            res = synthesize(cfg)
            counts = res.metrics["model"]
            assert 1140 <= counts["constraints"] <= 114_000
            assert 570 <= counts["binary"] <= 57_000
            assert res.solution is not None and res.solution.values is not None
            assert math.isfinite(res.solution.gap)
            assert res.identities.passed
            parts.append(f"external automaton: {counts['constraints']} rows, {counts['binary']} binaries, "
                         f"gap {res.solution.gap:.2g}")
        else:
            parts.append(f"no {EXTERNAL_ENV}; surveillance variant")
        assert len(degeneralize(surveillance_ldgba()).states) <= 8
        for mode in ("A", "B"):
            res, secs = solved(f"nursery:{mode}")
            assert res.status == "ok", res.message
            assert res.solution.status == "optimal"
            assert secs <= 300.0
            assert res.product.mdp.ap == NURSERY_AP
            hits = _never_enters_d(res)
            assert hits == 0
            parts.append(f"mode {mode}: optimal {res.solution.objective:.7g} in {secs:.1f} s, "
                         f"0/1000 runs of 300 steps enter d")
        out.detail = "; ".join(parts)


def test_identities_on_every_instance():
    with acceptance(6, "occupancy identities on every solved instance") as out:
        worst_mass = worst_flow = 0.0
        for key in INSTANCES:
            res, _ = solved(key)
            assert res.solution.values is not None, key
            ident = res.identities
            g = res.product.gamma
            worst_mass = max(worst_mass, abs(ident.discounted_mass - 1.0 / (1.0 - g)))
            worst_flow = max(worst_flow, abs(ident.goal_inflow - 1.0))
            assert abs(ident.discounted_mass - 1.0 / (1.0 - g)) <= 1e-6, key
            assert abs(ident.goal_inflow - 1.0) <= 1e-9, key
            assert ident.support_agrees, key
            assert ident.max_selected <= 1, key
        out.detail = (f"{len(INSTANCES)} instances; worst |sum y - 1/(1-g)| {worst_mass:.1e}, "
                      f"worst |in_x(g) - 1| {worst_flow:.1e}")


def test_deterministic_outputs(tmp_path):
    with acceptance(10, "deterministic runs are byte-identical") as out:
        args = ["synth", "--scenario", "safe-motion", "--p", "0.8", "--gamma", "0.9", "--zeta", "0.9",
                "--seed", "11", "--deterministic", "--episodes", "200"]
        for run in ("a", "b"):
            assert main(args + ["--out", str(tmp_path / run)]) == 0
        for name in ("policy.json", "metrics.json", "verification.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
        out.detail = "policy.json, metrics.json and verification.json identical across two runs"


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))

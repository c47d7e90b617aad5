from dataclasses import replace

import pytest

from ltlsynth.milp import build_milp
from ltlsynth.policy import (COMPLETED, FROM_DELTA, UNREACHABLE, ExtractionError, ProductPolicy,
                             extract_policy, occupancy_identities, policy_from_dict, verify_policy)
from ltlsynth.product import build_absorbing, build_product
from ltlsynth.scenarios import build_example1, build_safe_motion, persist_ldba
from ltlsynth.solver import solve_milp


@pytest.fixture(scope="module", params=["example1", "safe-motion"])
def solved(request):
    m = build_example1() if request.param == "example1" else build_safe_motion()
    p = build_product(m, persist_ldba(), reachable_only=False)
    z = build_absorbing(p, 0.9)
    model = build_milp(p, z)
    sol = solve_milp(model)
    return p, z, model, sol, extract_policy(sol, model, p)


def test_every_state_gets_one_action(solved):
    p, _, _, _, pi = solved
    assert set(pi.choice) == set(p.product_states)
    assert all(pi.choice[s] in p.actions[s] for s in p.product_states)
    assert set(pi.provenance.values()) <= {FROM_DELTA, COMPLETED, UNREACHABLE}
    assert pi.provenance[p.initial] == FROM_DELTA


def test_extracted_policy_verifies(solved):
    p, z, _, sol, pi = solved
    rep = verify_policy(pi, p, z, sol.objective)
    assert rep.passed, rep.flags


def test_occupancy_identities(solved):
    _, z, model, sol, _ = solved
    ids = occupancy_identities(sol, model, z)
    assert ids.passed, ids.to_dict()
    assert abs(ids.discounted_mass - 10.0) <= 1e-9


def test_completion_choices_do_not_change_the_value(solved):
    p, z, _, sol, pi = solved
    free = [s for s, how in pi.provenance.items() if how != FROM_DELTA]
    alt = dict(pi.choice)
    for s in free:
        acts = sorted(p.actions[s], key=str)
        alt[s] = acts[-1]
    rep = verify_policy(ProductPolicy(alt, pi.provenance), p, z, sol.objective)
    assert abs(rep.value - sol.objective) <= 1e-6


def test_resting_forever_fails_verification():
    p = build_product(build_example1(), persist_ldba(), reachable_only=False)
    z = build_absorbing(p)
    rest = {s: "rest" for s in p.product_states}
    rep = verify_policy(ProductPolicy(rest, {s: COMPLETED for s in rest}), p, z, 0.0)
    assert rep.absorption == 0.0 and not rep.passed


def test_document_round_trip(solved):
    p, _, _, sol, pi = solved
    doc = pi.to_dict(p, sol.objective, 1.0)
    back = policy_from_dict(doc)
    assert back.choice == pi.choice and back.provenance == pi.provenance
    with pytest.raises(ExtractionError):
        policy_from_dict({"choices": [{"memory": "0"}]})


def test_two_selected_actions_rejected(solved):
    p, _, model, sol, _ = solved
    bad = sol.values.copy()
    s = p.initial
    for a in p.actions[s]:
        bad[model.families["d"][(s, a)]] = 1.0
    with pytest.raises(ExtractionError):
        extract_policy(replace(sol, values=bad), model, p)

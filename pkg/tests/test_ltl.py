import random

import pytest
from hypothesis import given, settings, strategies as st

import oracles
from ltlsynth.ltl import (TRUE, Always, And, Atom, Const, Eventually, Implies, LassoWord, LTLSyntaxError, Next,
                          Not, Or, UndeclaredAtomError, Until, atoms, depth, eval_lasso, format_ltl, normalize,
                          parse_ltl)

AP = ("a", "b", "c")


def formulas(max_leaves=12):
    leaves = st.one_of(st.sampled_from([Atom(x) for x in AP]), st.sampled_from([Const(True), Const(False)]))
    unary = (Not, Next, Eventually, Always)
    binary = (And, Or, Implies, Until)
    return st.recursive(
        leaves,
        lambda kids: st.one_of(
            st.builds(lambda k, f: k(f), st.sampled_from(unary), kids),
            st.builds(lambda k, l, r: k(l, r), st.sampled_from(binary), kids, kids),
        ),
        max_leaves=max_leaves,
    )


letters = st.frozensets(st.sampled_from(AP))
lassos = st.builds(lambda p, c: LassoWord(tuple(p), tuple(c)),
                   st.lists(letters, max_size=3), st.lists(letters, min_size=1, max_size=3))


def test_parse_running_formula():
    f = parse_ltl("(F G l0 | F G l1) & G !m", {"l0", "l1", "m"})
    assert f == And(Or(Eventually(Always(Atom("l0"))), Eventually(Always(Atom("l1")))), Always(Not(Atom("m"))))


def test_parse_constants_and_precedence():
    assert parse_ltl("true", {"a"}) == TRUE
    assert parse_ltl("a U (b & X c)", AP) == Until(Atom("a"), And(Atom("b"), Next(Atom("c"))))
    assert parse_ltl("a | b & c", AP) == Or(Atom("a"), And(Atom("b"), Atom("c")))
    assert parse_ltl("a U b U c", AP) == Until(Atom("a"), Until(Atom("b"), Atom("c")))
    assert parse_ltl("a -> b -> c", AP) == Implies(Atom("a"), Implies(Atom("b"), Atom("c")))
    assert parse_ltl("!a U b", AP) == Until(Not(Atom("a")), Atom("b"))


@pytest.mark.parametrize("text", ["a &", "(a", "a b", "U a", "", "a $ b"])
def test_syntax_errors_carry_position(text):
    with pytest.raises(LTLSyntaxError) as err:
        parse_ltl(text, AP)
    assert 0 <= err.value.pos <= len(text)


def test_undeclared_atom_is_named():
    with pytest.raises(UndeclaredAtomError) as err:
        parse_ltl("a & zed", AP)
    assert err.value.atom == "zed"


def test_format_basics():
    assert format_ltl(TRUE) == "true"
    assert format_ltl(Atom("a")) == "a"


@given(formulas())
def test_format_round_trip(f):
    assert parse_ltl(format_ltl(f), AP) == f


def test_eval_examples():
    ap = {"l0", "l1", "m"}
    assert eval_lasso(parse_ltl("G !m", ap), LassoWord((), ({"l0"},)))
    assert eval_lasso(parse_ltl("F G l0 | F G l1", ap), LassoWord(({}, {}), ({"l1"},)))
    assert not eval_lasso(parse_ltl("F G l0", ap), LassoWord((), ({"l0"}, set())))
    assert eval_lasso(parse_ltl("G F l0", ap), LassoWord((), ({"l0"}, set())))


def test_spec_style_formula_against_brute_force():
    f = parse_ltl("(!b & X b & !X X b) -> (!a U c)", AP)
    rng = random.Random(1)
    for _ in range(500):
        w = oracles.random_lasso(rng, AP, 3, 3)
        assert eval_lasso(f, w) == oracles.lasso_truth(f, w)


@settings(max_examples=300)
@given(formulas(), lassos)
def test_agrees_with_unrolling_oracle(f, w):
    if depth(f) <= 6:
        assert eval_lasso(f, w) == oracles.lasso_truth(f, w)


@settings(max_examples=200)
@given(formulas(8), lassos)
def test_semantic_identities(f, w):
    assert eval_lasso(Eventually(f), w) == eval_lasso(Until(TRUE, f), w)
    assert eval_lasso(Always(f), w) == (not eval_lasso(Eventually(Not(f)), w))
    assert eval_lasso(normalize(f), w) == eval_lasso(f, w)


@settings(max_examples=200)
@given(formulas(8), lassos, st.integers(0, 5))
def test_rotation_invariance(f, w, k):
    assert eval_lasso(f, w) == eval_lasso(f, w.rotate(k))


def test_atoms_and_lasso_checks():
    f = parse_ltl("a U X b", AP)
    assert atoms(f) == {"a", "b"}
    with pytest.raises(ValueError):
        LassoWord(({"a"},), ())
    with pytest.raises(ValueError):
        LassoWord((), ({"q"},)).check_alphabet(AP)

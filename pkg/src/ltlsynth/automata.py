"""Limit-deterministic (generalized) Buchi automata with transition acceptance.

Transition labels are propositional formulas over the automaton's atomic
propositions; a transition fires on a letter (a set of propositions) when its
label holds on it.  A missing transition means the run is rejected.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional

import jsonschema

from .ltl import Formula, LassoWord, atoms, format_ltl, holds, is_propositional, parse_ltl

FORMAT_VERSION = 1


@dataclass(frozen=True)
class Transition:
    source: str
    label: Formula
    target: str

    def __str__(self):
        return f"({self.source}, {format_ltl(self.label)}, {self.target})"


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    witness: tuple = ()


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple
    initial_states: frozenset
    accepting_states: frozenset

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return f"valid: Qi={sorted(self.initial_states)} Qf={sorted(self.accepting_states)}"
        return "\n".join(f"[{v.kind}] {v.message}" for v in self.violations)


class AutomatonError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LDGBA:
    """Limit-deterministic generalized Buchi automaton.

    ``acceptance`` holds one frozenset of transition indices per acceptance
    set; an automaton with exactly one set is an LDBA.
    """

    ap: frozenset
    states: tuple
    initial: str
    transitions: tuple
    epsilon: tuple = ()
    acceptance: tuple = (frozenset(),)
    partition_hint: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "ap", frozenset(self.ap))
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "transitions", tuple(self.transitions))
        object.__setattr__(self, "epsilon", tuple(tuple(e) for e in self.epsilon))
        object.__setattr__(self, "acceptance", tuple(frozenset(f) for f in self.acceptance))
        known = set(self.states)
        if self.initial not in known:
            raise AutomatonError(f"initial state {self.initial!r} is not a state")
        for t in self.transitions:
            if t.source not in known or t.target not in known:
                raise AutomatonError(f"transition {t} mentions an unknown state")
            extra = atoms(t.label) - self.ap
            if extra:
                raise AutomatonError(f"transition {t} uses undeclared propositions {sorted(extra)}")
        for src, dst in self.epsilon:
            if src not in known or dst not in known:
                raise AutomatonError(f"epsilon transition {src}->{dst} mentions an unknown state")
        if not self.acceptance:
            raise AutomatonError("at least one acceptance set is required")
        for fset in self.acceptance:
            bad = [i for i in fset if not 0 <= i < len(self.transitions)]
            if bad:
                raise AutomatonError(f"acceptance set references unknown transitions {bad}")

    def __eq__(self, other):
        if not isinstance(other, LDGBA):
            return NotImplemented
        return (self.ap, self.states, self.initial, self.transitions, frozenset(self.epsilon), self.acceptance) == (
            other.ap, other.states, other.initial, other.transitions, frozenset(other.epsilon), other.acceptance)

    def __hash__(self):
        return hash((self.ap, self.states, self.initial, self.transitions))

    @property
    def n_sets(self) -> int:
        return len(self.acceptance)

    @property
    def is_ldba(self) -> bool:
        return self.n_sets == 1

    @property
    def accepting(self) -> frozenset:
        """Accepting transition indices of an LDBA."""
        if not self.is_ldba:
            raise AutomatonError("automaton has several acceptance sets; degeneralize it first")
        return self.acceptance[0]

    @cached_property
    def outgoing(self) -> dict:
        out = {q: [] for q in self.states}
        for i, t in enumerate(self.transitions):
            out[t.source].append(i)
        return out

    @cached_property
    def epsilon_targets(self) -> dict:
        eps = {q: [] for q in self.states}
        for src, dst in self.epsilon:
            if dst not in eps[src]:
                eps[src].append(dst)
        return {q: tuple(sorted(v)) for q, v in eps.items()}

    @cached_property
    def partition(self) -> tuple:
        """``(Qi, Qf)``: Qf is everything reachable from an epsilon target.

        States unreachable from the initial state (degeneralization leaves
        some) join Qf when they lead into it, so closure is not violated by
        dead copies.
        """
        succ = {q: set() for q in self.states}
        pred = {q: set() for q in self.states}
        for t in self.transitions:
            succ[t.source].add(t.target)
            pred[t.target].add(t.source)
        for src, dst in self.epsilon:
            succ[src].add(dst)

        def closure(seeds, step, allowed=None):
            seen, stack = set(), list(seeds)
            while stack:
                q = stack.pop()
                if q in seen or (allowed is not None and q not in allowed):
                    continue
                seen.add(q)
                stack.extend(step[q])
            return seen

        live = closure([self.initial], succ)
        dead = set(self.states) - live
        qf = closure([dst for _, dst in self.epsilon], succ)
        while True:
            feeders = closure([p for q in qf for p in pred[q] if p in dead], pred, dead) - qf
            if not feeders:
                break
            qf |= closure(feeders, succ)
        qi = frozenset(q for q in self.states if q not in qf)
        return qi, frozenset(qf)

    def step(self, q: str, letter: frozenset) -> Optional[int]:
        """Index of the transition taken from ``q`` on ``letter`` (None if undefined)."""
        return self._step_cache(q, frozenset(letter))

    def _step_cache(self, q, letter):
        cache = self.__dict__.setdefault("_steps", {})
        key = (q, letter)
        if key not in cache:
            hit = None
            for i in self.outgoing[q]:
                if holds(self.transitions[i].label, letter):
                    hit = i
                    break
            cache[key] = hit
        return cache[key]

    def delta(self, q: str, letter: frozenset) -> Optional[str]:
        i = self.step(q, letter)
        return None if i is None else self.transitions[i].target


LDBA = LDGBA


def _letters(ap: frozenset):
    props = sorted(ap)
    for bits in itertools.product((False, True), repeat=len(props)):
        yield frozenset(p for p, b in zip(props, bits) if b)


def validate(a: LDGBA) -> ValidationReport:
    """Check the structural limit-determinism conditions; never raises."""
    qi, qf = a.partition
    if a.partition_hint is not None:
        hint_qi, hint_qf = (frozenset(x) for x in a.partition_hint)
        if hint_qi | hint_qf == frozenset(a.states) and not hint_qi & hint_qf:
            qi, qf = hint_qi, hint_qf
    violations = []
    if a.partition_hint is not None and (qi, qf) != a.partition:
        violations.append(Violation(
            "partition", "declared Qi/Qf partition differs from the one implied by epsilon transitions",
            (tuple(sorted(a.partition[0])), tuple(sorted(a.partition[1])))))
    for src, dst in a.epsilon:
        if src in qf:
            violations.append(Violation("epsilon", f"epsilon transition {src}->{dst} leaves a state of Qf", (src, dst)))
        elif dst in qi:
            violations.append(Violation("epsilon", f"epsilon transition {src}->{dst} ends in Qi", (src, dst)))
    for t in a.transitions:
        if not is_propositional(t.label):
            violations.append(Violation("label", f"transition {t} has a temporal label", (t.source, t.target)))
    letters = list(_letters(a.ap))
    for q in a.states:
        out = a.outgoing[q]
        for i, j in itertools.combinations(out, 2):
            ti, tj = a.transitions[i], a.transitions[j]
            if not (is_propositional(ti.label) and is_propositional(tj.label)):
                continue
            for letter in letters:
                if holds(ti.label, letter) and holds(tj.label, letter):
                    violations.append(Violation(
                        "determinism",
                        f"state {q}: labels {format_ltl(ti.label)!r} and {format_ltl(tj.label)!r} overlap on {sorted(letter)}",
                        (q, i, j, tuple(sorted(letter)))))
                    break
    for t in a.transitions:
        if t.source in qf and t.target in qi:
            violations.append(Violation("closure", f"transition {t} leaves Qf", (t.source, t.target)))
        elif t.source in qi and t.target in qf:
            violations.append(Violation("closure", f"labelled transition {t} connects Qi to Qf", (t.source, t.target)))
    for k, fset in enumerate(a.acceptance):
        for i in sorted(fset):
            t = a.transitions[i]
            if t.source not in qf or t.target not in qf:
                violations.append(Violation("acceptance", f"accepting transition {t} (set {k + 1}) is not inside Qf", (i,)))
    return ValidationReport(tuple(violations), qi, qf)


def copy_name(q: str, k: int) -> str:
    return f"{q}@{k}"


def degeneralize(g: LDGBA) -> LDGBA:
    """Reduce n acceptance sets to one by replicating the accepting component n times."""
    report = validate(g)
    if not report.ok:
        raise AutomatonError(f"cannot degeneralize an invalid automaton:\n{report}")
    n = g.n_sets
    if n == 1:
        return LDGBA(g.ap, g.states, g.initial, g.transitions, g.epsilon, g.acceptance, g.partition_hint)
    qi, qf = report.initial_states, report.accepting_states

    states = [q for q in g.states if q in qi]
    for k in range(1, n + 1):
        states += [copy_name(q, k) for q in g.states if q in qf]

    transitions = []
    accepting = set()
    for i, t in enumerate(g.transitions):
        if t.source in qi:
            transitions.append(t)
            continue
        for k in range(1, n + 1):
            target_copy = k % n + 1 if i in g.acceptance[k - 1] else k
            if i in g.acceptance[0] and k == 1:
                accepting.add(len(transitions))
            transitions.append(Transition(copy_name(t.source, k), t.label, copy_name(t.target, target_copy)))
    epsilon = [(src, copy_name(dst, 1)) for src, dst in g.epsilon]
    initial = g.initial if g.initial in qi else copy_name(g.initial, 1)
    hint = None
    if g.partition_hint is not None:
        hint = (tuple(q for q in states if q in qi), tuple(q for q in states if q not in qi))
    return LDGBA(g.ap, tuple(states), initial, tuple(transitions), tuple(epsilon), (frozenset(accepting),), hint)


def _det_run_accepts(a: LDGBA, q: str, w: LassoWord, pos: int, accepting: frozenset) -> bool:
    """Deterministic run from state ``q`` at absolute position ``pos``."""
    k, c = len(w.prefix), len(w.cycle)
    while pos < k:
        i = a.step(q, w.letter(pos))
        if i is None:
            return False
        q = a.transitions[i].target
        pos += 1
    seen = {}
    hits = []
    while True:
        key = (q, (pos - k) % c)
        if key in seen:
            start = seen[key]
            return any(hits[start:])
        seen[key] = len(hits)
        i = a.step(q, w.letter(pos))
        if i is None:
            return False
        hits.append(i in accepting)
        q = a.transitions[i].target
        pos += 1


def accepts_lasso(a: LDGBA, w: LassoWord) -> bool:
    """Whether some resolution of at most one epsilon jump yields an accepting run."""
    accepting = a.accepting
    if _det_run_accepts(a, a.initial, w, 0, accepting):
        return True
    k, c = len(w.prefix), len(w.cycle)
    q, pos = a.initial, 0
    seen = set()
    while True:
        if pos >= k:
            key = (q, (pos - k) % c)
            if key in seen:
                return False
            seen.add(key)
        for dst in a.epsilon_targets[q]:
            if _det_run_accepts(a, dst, w, pos, accepting):
                return True
        i = a.step(q, w.letter(pos))
        if i is None:
            return False
        q = a.transitions[i].target
        pos += 1


def generalized_accepts_lasso(a: LDGBA, w: LassoWord) -> bool:
    """Lasso acceptance for several sets: every set must recur in the loop."""
    k, c = len(w.prefix), len(w.cycle)

    def run(q, pos):
        while pos < k:
            i = a.step(q, w.letter(pos))
            if i is None:
                return False
            q = a.transitions[i].target
            pos += 1
        seen, taken = {}, []
        while True:
            key = (q, (pos - k) % c)
            if key in seen:
                loop = set(taken[seen[key]:])
                return all(loop & fset for fset in a.acceptance)
            seen[key] = len(taken)
            i = a.step(q, w.letter(pos))
            if i is None:
                return False
            taken.append(i)
            q = a.transitions[i].target
            pos += 1

    if run(a.initial, 0):
        return True
    q, pos, seen = a.initial, 0, set()
    while True:
        if pos >= k:
            key = (q, (pos - k) % c)
            if key in seen:
                return False
            seen.add(key)
        if any(run(dst, pos) for dst in a.epsilon_targets[q]):
            return True
        i = a.step(q, w.letter(pos))
        if i is None:
            return False
        q = a.transitions[i].target
        pos += 1


# -- JSON --------------------------------------------------------------------

AUTOMATON_SCHEMA = {
    "type": "object",
    "required": ["ap", "states", "initial", "transitions", "acceptance_sets"],
    "properties": {
        "format_version": {"type": "integer"},
        "ap": {"type": "array", "items": {"type": "string"}},
        "states": {"type": "array", "items": {"type": "string"}, "minItems": 1},
        "initial": {"type": "string"},
        "transitions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "label", "to"],
                "properties": {"from": {"type": "string"}, "label": {"type": "string"}, "to": {"type": "string"}},
            },
        },
        "epsilon": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["from", "to"],
                "properties": {"from": {"type": "string"}, "to": {"type": "string"}},
            },
        },
        "acceptance_sets": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        },
        "partition": {
            "type": "object",
            "properties": {"initial": {"type": "array"}, "accepting": {"type": "array"}},
        },
    },
}


class SchemaError(ValueError):
    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


def _json_path(err: jsonschema.ValidationError) -> str:
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)


def automaton_from_dict(data: dict) -> LDGBA:
    try:
        jsonschema.validate(data, AUTOMATON_SCHEMA)
    except jsonschema.ValidationError as err:
        raise SchemaError(err.message, _json_path(err)) from None
    ap = frozenset(data["ap"])
    transitions = []
    for k, t in enumerate(data["transitions"]):
        try:
            label = parse_ltl(t["label"], ap) if ap else parse_ltl(t["label"], {"_"})
        except ValueError as err:
            raise SchemaError(str(err), f"$.transitions[{k}].label") from None
        transitions.append(Transition(t["from"], label, t["to"]))
    hint = None
    if "partition" in data:
        hint = (tuple(data["partition"].get("initial", [])), tuple(data["partition"].get("accepting", [])))
    try:
        return LDGBA(
            ap=ap,
            states=tuple(data["states"]),
            initial=data["initial"],
            transitions=tuple(transitions),
            epsilon=tuple((e["from"], e["to"]) for e in data.get("epsilon", [])),
            acceptance=tuple(frozenset(s) for s in data["acceptance_sets"]),
            partition_hint=hint,
        )
    except AutomatonError as err:
        raise SchemaError(str(err)) from None


def automaton_to_dict(a: LDGBA) -> dict:
    data = {
        "format_version": FORMAT_VERSION,
        "ap": sorted(a.ap),
        "states": list(a.states),
        "initial": a.initial,
        "transitions": [{"from": t.source, "label": format_ltl(t.label), "to": t.target} for t in a.transitions],
        "epsilon": [{"from": s, "to": d} for s, d in a.epsilon],
        "acceptance_sets": [sorted(f) for f in a.acceptance],
    }
    if a.partition_hint is not None:
        data["partition"] = {"initial": list(a.partition_hint[0]), "accepting": list(a.partition_hint[1])}
    return data


@dataclass(frozen=True)
class LoadedAutomaton:
    automaton: LDGBA
    report: ValidationReport


def load_automaton(path) -> LoadedAutomaton:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise SchemaError(f"invalid JSON: {err}") from None
    a = automaton_from_dict(data)
    return LoadedAutomaton(a, validate(a))


def save_automaton(a: LDGBA, path) -> None:
    Path(path).write_text(json.dumps(automaton_to_dict(a), indent=2) + "\n", encoding="utf-8")

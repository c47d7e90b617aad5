"""Product of a labelled MDP with an LDBA, and its absorbing reachability variant.

Product states are pairs ``(s, q)``.  Epsilon moves of the automaton become
actions ``eps:<q'>``.  A product transition whose automaton move is undefined
leads to the single absorbing ``TRAP`` state; the absorbing variant adds the
absorbing ``GOAL`` state.  Neither sink counts as a product state proper.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Optional


from .automata import LDGBA, validate
from .mdp import MDP, LabeledMDP, make_rng

TRAP = ("*", "trap")
GOAL = ("*", "goal")
SINK_ACTION = "stay"
EPS_PREFIX = "eps:"


def eps_action(q: str) -> str:
    return EPS_PREFIX + q


def is_eps(a) -> bool:
    return isinstance(a, str) and a.startswith(EPS_PREFIX)


def eps_target(a: str) -> str:
    return a[len(EPS_PREFIX):]


class ProductError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ProductMDP(MDP):
    """MDP over ``S x Q`` (plus ``TRAP`` when needed) with accepting transitions."""

    mdp: Optional[LabeledMDP] = None
    automaton: Optional[LDGBA] = None
    product_states: tuple = ()
    accepting: frozenset = frozenset()
    reachable_only: bool = False

    @property
    def accepting_pairs(self) -> frozenset:
        return frozenset((s, a) for s, a, _ in self.accepting)

    @property
    def n_full(self) -> int:
        return len(self.mdp.states) * len(self.automaton.states)


@dataclass(frozen=True, eq=False)
class AbsorbingMDP(MDP):
    product: Optional[ProductMDP] = None
    zeta: float = 0.9
    goal: tuple = GOAL


def build_product(m: LabeledMDP, a: LDGBA, reachable_only: bool = True) -> ProductMDP:
    """Synchronous product; rewards in the accepting component are divided by gamma."""
    if not a.is_ldba:
        raise ProductError("the automaton has several acceptance sets; degeneralize it first")
    if not a.ap <= m.ap:
        raise ProductError(f"automaton propositions {sorted(a.ap - m.ap)} are not labels of the MDP")
    report = validate(a)
    if not report.ok:
        raise ProductError(f"automaton is not limit-deterministic:\n{report}")
    qf = report.accepting_states
    gamma = m.gamma
    accepting_idx = a.accepting

    actions, transitions, rewards = {}, {}, {}
    accepting = set()
    uses_trap = False

    def expand(state):
        nonlocal uses_trap
        s, q = state
        letter = m.labels[s] & a.ap
        k = a.step(q, letter)
        acts = list(m.actions[s])
        for a_ in acts:
            if k is None:
                row = {TRAP: 1.0}
                uses_trap = True
            else:
                q2 = a.transitions[k].target
                row = {}
                for t, p in m.transitions[(s, a_)].items():
                    if p > 0:
                        row[(t, q2)] = row.get((t, q2), 0.0) + p
                if k in accepting_idx:
                    accepting.update((state, a_, dst) for dst in row)
            transitions[(state, a_)] = row
            r = m.reward(s, a_)
            rewards[(state, a_)] = r / gamma if q in qf else r
        for q2 in a.epsilon_targets[q]:
            e = eps_action(q2)
            acts.append(e)
            transitions[(state, e)] = {(s, q2): 1.0}
            rewards[(state, e)] = 0.0
        actions[state] = tuple(acts)

    if reachable_only:
        start = (m.initial, a.initial)
        seen = {start}
        queue = deque([start])
        while queue:
            st = queue.popleft()
            expand(st)
            for act in actions[st]:
                for dst in transitions[(st, act)]:
                    if dst != TRAP and dst not in seen:
                        seen.add(dst)
                        queue.append(dst)
        core = tuple(sorted(seen))
    else:
        core = tuple((s, q) for s in m.states for q in a.states)
        for st in core:
            expand(st)
        core = tuple(sorted(core))

    states = core
    if uses_trap:
        states = core + (TRAP,)
        actions[TRAP] = (SINK_ACTION,)
        transitions[(TRAP, SINK_ACTION)] = {TRAP: 1.0}
        rewards[(TRAP, SINK_ACTION)] = 0.0
    return ProductMDP(states, actions, transitions, rewards, (m.initial, a.initial), gamma,
                      mdp=m, automaton=a, product_states=core, accepting=frozenset(accepting),
                      reachable_only=reachable_only)


def build_absorbing(p: ProductMDP, zeta: float = 0.9) -> AbsorbingMDP:
    """Every accepting row leaks ``1 - zeta`` of its mass to the absorbing goal."""
    if not 0.0 < zeta < 1.0:
        raise ValueError(f"zeta must lie in (0, 1), got {zeta}")
    acc_pairs = p.accepting_pairs
    transitions = {}
    for s, a in p.pairs():
        row = p.transitions[(s, a)]
        if (s, a) in acc_pairs:
            new = {t: zeta * prob for t, prob in row.items()}
            new[GOAL] = 1.0 - zeta
            transitions[(s, a)] = new
        else:
            transitions[(s, a)] = dict(row)
    actions = dict(p.actions)
    actions[GOAL] = (SINK_ACTION,)
    transitions[(GOAL, SINK_ACTION)] = {GOAL: 1.0}
    return AbsorbingMDP(p.states + (GOAL,), actions, transitions, {}, p.initial, p.gamma,
                        product=p, zeta=zeta, goal=GOAL)


# -- qualitative almost-sure reachability ------------------------------------

@dataclass(frozen=True)
class ReachResult:
    feasible: bool
    winning_states: frozenset
    winning_actions: Mapping = field(default_factory=dict)


def qualitative_pr1_reach(z: MDP, goal=GOAL, restrict: Optional[Mapping] = None) -> ReachResult:
    """States from which some policy reaches ``goal`` with probability one.

    Alternates backward reachability of the goal with removal of actions that
    may leave the candidate set.  ``restrict`` optionally limits the actions
    available per state (used to test a fixed policy).
    """
    acts = {s: tuple(restrict[s]) if restrict is not None and s in restrict else z.actions[s] for s in z.states}
    succ = {(s, a): [t for t, p in z.transitions[(s, a)].items() if p > 0] for s in z.states for a in acts[s]}
    pred = {s: [] for s in z.states}
    for (s, a), ts in succ.items():
        for t in ts:
            pred[t].append((s, a))

    candidate = set(z.states)
    while True:
        allowed = {(s, a) for (s, a), ts in succ.items() if s in candidate and all(t in candidate for t in ts)}
        reach = {goal}
        queue = deque([goal])
        while queue:
            t = queue.popleft()
            for s, a in pred[t]:
                if s not in reach and (s, a) in allowed:
                    reach.add(s)
                    queue.append(s)
        reach &= candidate
        if reach == candidate:
            break
        candidate = reach
    winning_actions = {
        s: tuple(a for a in acts[s] if (s, a) in allowed)
        for s in candidate if s != goal
    }
    return ReachResult(z.initial in candidate, frozenset(candidate), winning_actions)


# -- policy projection -------------------------------------------------------

class PolicyProjectionError(ValueError):
    pass


@dataclass(frozen=True)
class InducedPolicy:
    """Finite-memory policy on the original MDP; memory is the automaton state."""

    choice: Mapping
    automaton: LDGBA
    labels: Mapping
    fallback: Mapping = field(default_factory=dict)  # MDP action once the automaton has rejected

    def initial_memory(self, s):
        return self.automaton.initial

    def resolve(self, s, q):
        """Apply at most one epsilon jump and return ``(action, memory)``.

        Memory ``None`` means the automaton has no run left (the product is in
        its trap); the run is lost either way and the fallback action is used.
        """
        if q is None and s in self.fallback:
            return self.fallback[s], None
        a = self.choice.get((s, q))
        if a is None:
            raise PolicyProjectionError(f"product policy undefined at {(s, q)!r}")
        if is_eps(a):
            q = eps_target(a)
            a = self.choice.get((s, q))
            if a is None:
                raise PolicyProjectionError(f"product policy undefined at {(s, q)!r}")
            if is_eps(a):
                raise PolicyProjectionError(f"chained epsilon actions at {(s, q)!r}: corrupt policy")
        return a, q

    def act(self, s, memory, rng_u: float = 0.0):
        return self.resolve(s, memory)

    def update(self, memory, s, a, t):
        if memory is None:
            return None
        return self.automaton.delta(memory, self.labels[s] & self.automaton.ap)


def project_policy(choice: Mapping, m: LabeledMDP, a: LDGBA) -> InducedPolicy:
    """Turn a deterministic product policy ``{(s, q): action}`` into a finite-memory policy on ``m``."""
    for (s, q), act in choice.items():
        if (s, q) == TRAP or (s, q) == GOAL:
            continue
        if is_eps(act):
            if eps_target(act) not in a.epsilon_targets.get(q, ()):
                raise PolicyProjectionError(f"{act!r} is not an epsilon move of automaton state {q!r}")
        elif act not in m.actions[s]:
            raise PolicyProjectionError(f"action {act!r} unavailable in MDP state {s!r}")
    return InducedPolicy(dict(choice), a, m.labels, {s: min(m.actions[s], key=str) for s in m.states})


# -- reward bookkeeping between product and absorbing MDP -----------------------------------------

@dataclass(frozen=True)
class RewardEquivalenceReport:
    trials: int
    horizon: int
    max_deviation: float
    bound: float
    runs_with_epsilon: int

    @property
    def ok(self) -> bool:
        return self.max_deviation <= self.bound


def project_run(states, actions):
    """Drop the epsilon step of a product run: returns the MDP state/action lists."""
    ms, ma = [], []
    for i, act in enumerate(actions):
        if is_eps(act):
            continue
        ms.append(states[i][0])
        ma.append(act)
    return ms, ma


def discounted_run_reward_equivalence_check(m: LabeledMDP, a: LDGBA, trials: int, horizon: int, seed: int = 0,
                                            product: Optional[ProductMDP] = None,
                                            eps_prob: float = 0.3) -> RewardEquivalenceReport:
    """Sample product runs under random choices; compare product and projected discounted rewards.

    Runs that enter the trap are cut at that point on both sides.  The
    projected run has one step fewer per epsilon jump, so both sums are
    compared over the same underlying MDP steps.
    """
    p = product or build_product(m, a, reachable_only=True)
    rng = make_rng(seed)
    g = m.gamma
    max_dev = 0.0
    with_eps = 0
    rmax = max((abs(m.reward(s, x)) for s, x in m.pairs()), default=0.0)
    for _ in range(trials):
        st = p.initial
        states, actions = [st], []
        for _t in range(horizon):
            if st == TRAP:
                break
            acts = p.actions[st]
            eps = [x for x in acts if is_eps(x)]
            if eps and rng.random() < eps_prob:
                act = eps[int(rng.integers(len(eps)))]
            else:
                plain = [x for x in acts if not is_eps(x)]
                act = plain[int(rng.integers(len(plain)))]
            nxt = p.sample(st, act, rng.random())
            actions.append(act)
            states.append(nxt)
            st = nxt
        if any(is_eps(x) for x in actions):
            with_eps += 1
        gx = math.fsum(g ** t * p.reward(states[t], actions[t]) for t in range(len(actions)))
        ms, ma = project_run(states, actions)
        gm = math.fsum(g ** t * m.reward(ms[t], ma[t]) for t in range(len(ma)))
        max_dev = max(max_dev, abs(gx - gm))
    bound = 1e-9 + g ** horizon * rmax / (1.0 - g)
    return RewardEquivalenceReport(trials, horizon, max_dev, bound, with_eps)

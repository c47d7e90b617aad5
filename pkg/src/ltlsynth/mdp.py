"""Finite labelled MDPs, policy evaluation and simulation.

States and actions are arbitrary hashable, sortable ids (strings for models
read from JSON, tuples for product models).  Randomness always comes from
``numpy.random.Generator(PCG64(seed))`` so runs are reproducible across
platforms.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Hashable, Mapping

import jsonschema
import numpy as np
import scipy.sparse as sp

FORMAT_VERSION = 1
ROW_TOL = 1e-9


class ModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MDP:
    """Discounted MDP: ``transitions[(s, a)]`` maps successors to probabilities."""

    states: tuple
    actions: Mapping
    transitions: Mapping
    rewards: Mapping
    initial: Hashable
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "actions", {s: tuple(a) for s, a in self.actions.items()})
        if not 0.0 < self.gamma < 1.0:
            raise ModelError(f"discount factor must lie in (0, 1), got {self.gamma}")
        if self.initial not in self.actions:
            raise ModelError(f"initial state {self.initial!r} is not a state")
        for s in self.states:
            if not self.actions.get(s):
                raise ModelError(f"state {s!r} has no actions")
            for a in self.actions[s]:
                row = self.transitions.get((s, a))
                if row is None:
                    raise ModelError(f"missing transitions for ({s!r}, {a!r})")
                total = math.fsum(row.values())
                if abs(total - 1.0) > ROW_TOL:
                    raise ModelError(f"transition probabilities of ({s!r}, {a!r}) sum to {total!r}, not 1")
                for t, p in row.items():
                    if p < 0:
                        raise ModelError(f"negative probability {p} on ({s!r}, {a!r}) -> {t!r}")
                    if t not in self.actions:
                        raise ModelError(f"({s!r}, {a!r}) moves to unknown state {t!r}")

    @cached_property
    def index(self) -> dict:
        return {s: i for i, s in enumerate(self.states)}

    def pairs(self):
        for s in self.states:
            for a in self.actions[s]:
                yield s, a

    def reward(self, s, a) -> float:
        return float(self.rewards.get((s, a), 0.0))

    def successors(self, s, a) -> dict:
        return self.transitions[(s, a)]

    @cached_property
    def _sampling_tables(self) -> dict:
        tables = {}
        for s, a in self.pairs():
            row = self.transitions[(s, a)]
            succ = [t for t in row if row[t] > 0]
            cum = np.cumsum([row[t] for t in succ])
            cum[-1] = 1.0
            tables[(s, a)] = (succ, cum)
        return tables

    def sample(self, s, a, u: float):
        """Successor of ``(s, a)`` for a uniform draw ``u`` in [0, 1)."""
        succ, cum = self._sampling_tables[(s, a)]
        return succ[int(np.searchsorted(cum, u, side="right"))] if len(succ) > 1 else succ[0]


@dataclass(frozen=True, eq=False)
class LabeledMDP(MDP):
    ap: frozenset = frozenset()
    labels: Mapping = field(default_factory=dict)

    def __post_init__(self):
        super().__post_init__()
        object.__setattr__(self, "ap", frozenset(self.ap))
        object.__setattr__(self, "labels", {s: frozenset(self.labels.get(s, ())) for s in self.states})
        for s, lab in self.labels.items():
            extra = lab - self.ap
            if extra:
                raise ModelError(f"state {s!r} carries undeclared propositions {sorted(extra)}")

    def label(self, s) -> frozenset:
        return self.labels[s]


# -- policies ----------------------------------------------------------------

@dataclass(frozen=True)
class StationaryPolicy:
    """``dist[s]`` maps actions to probabilities."""

    dist: Mapping

    @classmethod
    def deterministic(cls, choice: Mapping) -> "StationaryPolicy":
        return cls({s: {a: 1.0} for s, a in choice.items()})

    def check(self, m: MDP) -> None:
        for s in m.states:
            d = self.dist.get(s)
            if d is None:
                raise ModelError(f"policy undefined at state {s!r}")
            if abs(math.fsum(d.values()) - 1.0) > 1e-9:
                raise ModelError(f"policy distribution at {s!r} does not sum to 1")
            bad = set(d) - set(m.actions[s])
            if bad:
                raise ModelError(f"policy uses actions {sorted(map(str, bad))} not available at {s!r}")

    # finite-memory protocol shared with induced product policies
    def initial_memory(self, s):
        return None

    def act(self, s, memory, rng_u: float):
        d = self.dist[s]
        if len(d) == 1:
            return next(iter(d)), memory
        acc = 0.0
        items = list(d.items())
        for a, p in items:
            acc += p
            if rng_u < acc:
                return a, memory
        return items[-1][0], memory

    def update(self, memory, s, a, t):
        return memory


def induced_chain(m: MDP, policy: StationaryPolicy):
    """Sparse transition matrix and expected one-step reward under ``policy``."""
    n = len(m.states)
    idx = m.index
    rows, cols, vals = [], [], []
    r = np.zeros(n)
    for s in m.states:
        i = idx[s]
        for a, pa in policy.dist[s].items():
            if pa == 0:
                continue
            r[i] += pa * m.reward(s, a)
            for t, p in m.transitions[(s, a)].items():
                rows.append(i)
                cols.append(idx[t])
                vals.append(pa * p)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return P, r


def policy_value(m: MDP, policy: StationaryPolicy, tol: float = 1e-10, max_iter: int = 1_000_000) -> dict:
    """Value of a stationary policy by successive approximation.

    Stops once the sup-norm update falls below ``tol * (1 - gamma) / (2 gamma)``,
    which bounds the distance to the exact fixed point by ``tol``.
    """
    policy.check(m)
    P, r = induced_chain(m, policy)
    g = m.gamma
    threshold = tol * (1.0 - g) / (2.0 * g)
    v = np.zeros(len(m.states))
    for _ in range(max_iter):
        nv = r + g * (P @ v)
        diff = np.max(np.abs(nv - v)) if len(v) else 0.0
        v = nv
        if diff < threshold:
            break
    return {s: float(v[i]) for i, s in enumerate(m.states)}


# -- simulation --------------------------------------------------------------

@dataclass(frozen=True)
class RunRecord:
    states: tuple
    actions: tuple
    discounted_return: float
    visits: Mapping
    gamma: float
    rewards: tuple = ()

    def recompute_return(self) -> float:
        return math.fsum(self.gamma ** t * r for t, r in enumerate(self.rewards))


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def simulate(m: MDP, policy, horizon: int, seed: int = 0, start=None) -> RunRecord:
    """One run of ``horizon`` steps; ``policy`` follows the finite-memory protocol."""
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    rng = make_rng(seed)
    draws = rng.random((horizon, 2))
    s = m.initial if start is None else start
    mem = policy.initial_memory(s)
    states, actions, rewards = [s], [], []
    visits = {}
    labelled = isinstance(m, LabeledMDP)
    total = 0.0
    disc = 1.0
    for t in range(horizon):
        if labelled:
            for prop in sorted(m.labels[s]):
                visits.setdefault(prop, []).append(t)
        a, mem = policy.act(s, mem, draws[t, 0])
        if a not in m.actions[s]:
            raise ModelError(f"policy chose unavailable action {a!r} in state {s!r}")
        r = m.reward(s, a)
        rewards.append(r)
        total += disc * r
        disc *= m.gamma
        nxt = m.sample(s, a, draws[t, 1])
        mem = policy.update(mem, s, a, nxt)
        actions.append(a)
        states.append(nxt)
        s = nxt
    return RunRecord(tuple(states), tuple(actions), total, {k: tuple(v) for k, v in visits.items()},
                     m.gamma, tuple(rewards))


def horizon_for(gamma: float, eps: float) -> int:
    """Smallest horizon T with gamma**T < eps."""
    return int(math.floor(math.log(eps) / math.log(gamma))) + 1


@dataclass(frozen=True)
class MonteCarloSummary:
    mean: float
    std_error: float
    episodes: int
    horizon: int
    truncation_bound: float

    def consistent_with(self, value: float, n_se: float = 3.0) -> bool:
        return abs(self.mean - value) <= n_se * self.std_error + self.truncation_bound + 1e-9


def monte_carlo_return(m: MDP, policy, episodes: int, horizon: int, seed: int = 0) -> MonteCarloSummary:
    rng = make_rng(seed)
    seeds = rng.integers(0, 2**63 - 1, size=episodes)
    returns = np.array([simulate(m, policy, horizon, int(sd)).discounted_return for sd in seeds])
    rmax = max((abs(m.reward(s, a)) for s, a in m.pairs()), default=0.0)
    se = float(returns.std(ddof=1) / math.sqrt(episodes)) if episodes > 1 else float("inf")
    return MonteCarloSummary(float(returns.mean()), se, episodes, horizon,
                             m.gamma ** horizon * rmax / (1.0 - m.gamma))


# -- JSON --------------------------------------------------------------------

MDP_SCHEMA = {
    "type": "object",
    "required": ["ap", "gamma", "initial", "states", "actions"],
    "properties": {
        "format_version": {"type": "integer"},
        "ap": {"type": "array", "items": {"type": "string"}},
        "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "initial": {"type": "string"},
        "states": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id"],
                "properties": {"id": {"type": "string"}, "label": {"type": "array", "items": {"type": "string"}}},
            },
        },
        "actions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["state", "action", "transitions"],
                "properties": {
                    "state": {"type": "string"},
                    "action": {"type": "string"},
                    "reward": {"type": "number"},
                    "transitions": {
                        "type": "array",
                        "minItems": 1,
                        "items": {
                            "type": "object",
                            "required": ["to", "prob"],
                            "properties": {
                                "to": {"type": "string"},
                                "prob": {"type": "number", "minimum": 0},
                                "accepting": {"type": "boolean"},
                            },
                        },
                    },
                },
            },
        },
        "goal": {"type": "string"},
    },
}


class SchemaError(ValueError):
    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


def _json_path(err) -> str:
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)


def mdp_from_dict(data: dict) -> LabeledMDP:
    try:
        jsonschema.validate(data, MDP_SCHEMA)
    except jsonschema.ValidationError as err:
        raise SchemaError(err.message, _json_path(err)) from None
    ap = frozenset(data["ap"])
    states, labels = [], {}
    for k, st in enumerate(data["states"]):
        sid = st["id"]
        if sid in labels:
            raise SchemaError(f"duplicate state id {sid!r}", f"$.states[{k}].id")
        lab = frozenset(st.get("label", []))
        extra = lab - ap
        if extra:
            raise SchemaError(f"unknown atomic propositions {sorted(extra)}", f"$.states[{k}].label")
        states.append(sid)
        labels[sid] = lab
    actions = {s: [] for s in states}
    transitions, rewards = {}, {}
    for k, entry in enumerate(data["actions"]):
        s, a = entry["state"], entry["action"]
        if s not in actions:
            raise SchemaError(f"unknown state {s!r}", f"$.actions[{k}].state")
        if a in actions[s]:
            raise SchemaError(f"duplicate action {a!r} for state {s!r}", f"$.actions[{k}]")
        row = {}
        for j, tr in enumerate(entry["transitions"]):
            if tr["to"] not in labels:
                raise SchemaError(f"unknown state {tr['to']!r}", f"$.actions[{k}].transitions[{j}].to")
            row[tr["to"]] = row.get(tr["to"], 0.0) + float(tr["prob"])
        total = math.fsum(row.values())
        if abs(total - 1.0) > ROW_TOL:
            raise SchemaError(f"transition probabilities of ({s}, {a}) sum to {total!r}, not 1",
                              f"$.actions[{k}].transitions")
        actions[s].append(a)
        transitions[(s, a)] = row
        rewards[(s, a)] = float(entry.get("reward", 0.0))
    if data["initial"] not in labels:
        raise SchemaError(f"unknown initial state {data['initial']!r}", "$.initial")
    try:
        return LabeledMDP(tuple(states), actions, transitions, rewards, data["initial"], float(data["gamma"]),
                          ap=ap, labels=labels)
    except ModelError as err:
        raise SchemaError(str(err)) from None


def state_name(s) -> str:
    if isinstance(s, tuple):
        return "|".join(map(str, s))
    return str(s)


def mdp_to_dict(m: MDP, accepting=frozenset(), goal=None) -> dict:
    """Serialize; ``accepting`` holds (s, a, t) triples flagged in the output."""
    labelled = isinstance(m, LabeledMDP)
    data = {
        "format_version": FORMAT_VERSION,
        "ap": sorted(m.ap) if labelled else [],
        "gamma": m.gamma,
        "initial": state_name(m.initial),
        "states": [{"id": state_name(s), "label": sorted(m.labels[s]) if labelled else []} for s in m.states],
        "actions": [],
    }
    for s, a in m.pairs():
        trans = []
        for t, p in m.transitions[(s, a)].items():
            item = {"to": state_name(t), "prob": p}
            if (s, a, t) in accepting:
                item["accepting"] = True
            trans.append(item)
        data["actions"].append({"state": state_name(s), "action": str(a), "reward": m.reward(s, a),
                                "transitions": trans})
    if goal is not None:
        data["goal"] = state_name(goal)
    return data


def load_mdp(path) -> LabeledMDP:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise SchemaError(f"invalid JSON: {err}") from None
    return mdp_from_dict(data)


def save_mdp(m: MDP, path, **extra) -> None:
    Path(path).write_text(json.dumps(mdp_to_dict(m, **extra), indent=2) + "\n", encoding="utf-8")

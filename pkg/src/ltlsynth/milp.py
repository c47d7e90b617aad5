"""Occupancy-measure MILP for reward maximization under almost-sure acceptance.

Two flow systems share one set of binary selectors: ``y`` is the discounted
occupancy on the product MDP, ``x`` the expected visit counts on the
absorbing MDP, and ``d`` marks the (at most one) action chosen per state.
An indicator ties each continuous variable to its selector: if the selector
is 0, the variable is 0.
"""
from __future__ import annotations

import copy
import json
import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence
from urllib.parse import quote, unquote

import numpy as np
import scipy.sparse as sp

from .lp import LPProblem
from .mdp import state_name
from .product import GOAL, TRAP, AbsorbingMDP, ProductMDP, is_eps, qualitative_pr1_reach

FORMAT_VERSION = 1
STRICT_MARGIN = 1e-9


class AssumptionError(RuntimeError):
    """No policy satisfies the specification with probability one."""

    def __init__(self, initial):
        self.initial = initial
        super().__init__(
            f"Assumption 1 fails: no policy reaches the goal with probability 1 from initial state {state_name(initial)!r}"
        )


class ModelFormatError(ValueError):
    pass


@dataclass
class Row:
    name: str
    coefs: dict  # variable index -> coefficient
    sense: str  # '<', '=', '>'
    rhs: float


@dataclass
class Indicator:
    binary: int
    var: int
    family: str


@dataclass
class MILPModel:
    """A maximization MILP with binaries and (binary = 0) -> (var = 0) indicators."""

    names: list = field(default_factory=list)
    lb: list = field(default_factory=list)
    ub: list = field(default_factory=list)
    binary: list = field(default_factory=list)
    objective: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    indicators: list = field(default_factory=list)
    # structural metadata filled in by build_milp
    pairs: list = field(default_factory=list)
    states: list = field(default_factory=list)
    initial: object = None
    gamma: float = float("nan")
    families: dict = field(default_factory=dict)  # family -> {(s, a): var index}
    goal_row: Optional[int] = None
    flow_rows: dict = field(default_factory=dict)  # family -> {state: row index}

    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf, binary: bool = False) -> int:
        if name in self._index:
            raise ModelFormatError(f"duplicate variable {name!r}")
        self._index[name] = len(self.names)
        self.names.append(name)
        self.lb.append(0.0 if binary else lb)
        self.ub.append(1.0 if binary else ub)
        self.binary.append(binary)
        return len(self.names) - 1

    def add_row(self, name: str, coefs: Mapping, sense: str, rhs: float) -> int:
        if sense not in ("<", "=", ">"):
            raise ModelFormatError(f"bad sense {sense!r}")
        for j in coefs:
            if not 0 <= j < len(self.names):
                raise ModelFormatError(f"row {name!r} references undeclared variable {j}")
        self.rows.append(Row(name, {j: float(c) for j, c in coefs.items() if c != 0.0}, sense, float(rhs)))
        return len(self.rows) - 1

    @property
    def _index(self) -> dict:
        idx = self.__dict__.get("_name_index")
        if idx is None or len(idx) != len(self.names):
            idx = {n: i for i, n in enumerate(self.names)}
            self.__dict__["_name_index"] = idx
        return idx

    def var(self, name: str) -> int:
        return self._index[name]

    @property
    def n_vars(self) -> int:
        return len(self.names)

    @property
    def n_binary(self) -> int:
        return sum(self.binary)

    @property
    def n_continuous(self) -> int:
        return self.n_vars - self.n_binary

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def copy(self) -> "MILPModel":
        new = copy.deepcopy(self)
        new.__dict__.pop("_name_index", None)
        return new

    def counts(self) -> dict:
        return {
            "variables": self.n_vars,
            "binary": self.n_binary,
            "continuous": self.n_continuous,
            "occupancy": sum(len(v) for f, v in self.families.items() if f != "d"),
            "constraints": self.n_rows,
            "indicators": len(self.indicators),
        }

    def matrix(self) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        for i, r in enumerate(self.rows):
            for j, c in r.coefs.items():
                rows.append(i)
                cols.append(j)
                vals.append(c)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.n_rows, self.n_vars))

    def objective_vector(self) -> np.ndarray:
        c = np.zeros(self.n_vars)
        for j, v in self.objective.items():
            c[j] = v
        return c

    def to_lp(self, lb=None, ub=None) -> LPProblem:
        """Continuous relaxation; indicators are left out."""
        return LPProblem(
            self.objective_vector(),
            self.matrix(),
            np.array([r.sense for r in self.rows], dtype="<U1"),
            np.array([r.rhs for r in self.rows], dtype=float),
            np.asarray(self.lb if lb is None else lb, dtype=float),
            np.asarray(self.ub if ub is None else ub, dtype=float),
        )


@dataclass
class MILPSolution:
    status: str  # optimal | feasible | infeasible | limit
    values: Optional[np.ndarray]
    objective: float
    bound: float
    nodes: int = 0
    lp_solves: int = 0
    seconds: float = 0.0

    @property
    def gap(self) -> float:
        if self.values is None or not math.isfinite(self.bound):
            return math.inf
        return max(0.0, self.bound - self.objective) / max(1.0, abs(self.objective))

    def value(self, model: MILPModel, name: str) -> float:
        return float(self.values[model.var(name)])

    def family(self, model: MILPModel, fam: str) -> dict:
        return {pair: float(self.values[j]) for pair, j in model.families[fam].items()}


# -- construction ------------------------------------------------------------

def var_name(family: str, s, a) -> str:
    return f"{family}[{state_name(s)},{a}]"


def _sorted_pairs(p: ProductMDP):
    key = lambda sa: (state_name(sa[0]), str(sa[1]))
    return sorted(((s, a) for s in p.product_states for a in p.actions[s]), key=key)


def _flow_rows(model: MILPModel, family: str, pairs, states, initial, trans, discount: float):
    """out(s) - discount * in(s) = [s == initial] for each state in ``states``."""
    idx = model.families[family]
    coefs = {s: {} for s in states}
    for s, a in pairs:
        j = idx[(s, a)]
        coefs[s][j] = coefs[s].get(j, 0.0) + 1.0
        for t, prob in trans[(s, a)].items():
            if t in coefs and prob > 0:
                coefs[t][j] = coefs[t].get(j, 0.0) - discount * prob
    model.flow_rows[family] = {
        s: model.add_row(f"flow_{family}[{state_name(s)}]", coefs[s], "=", 1.0 if s == initial else 0.0)
        for s in states
    }


def build_milp(p: ProductMDP, z: AbsorbingMDP, check_assumption: bool = True) -> MILPModel:
    """The joint program over ``d``, ``x`` and ``y`` for product ``p`` and its absorbing variant ``z``."""
    if z.product is not None and z.product is not p:
        raise ValueError("absorbing MDP was built from a different product")
    if check_assumption and not qualitative_pr1_reach(z).feasible:
        raise AssumptionError(p.initial)
    pairs = _sorted_pairs(p)
    states = sorted(p.product_states, key=state_name)
    g = p.gamma
    model = MILPModel(pairs=pairs, states=states, initial=p.initial, gamma=g)
    y_cap = 1.0 / (1.0 - g)
    for fam, kw in (("d", {"binary": True}), ("x", {}), ("y", {"ub": y_cap})):
        model.families[fam] = {}
        for s, a in pairs:
            model.families[fam][(s, a)] = model.add_var(var_name(fam, s, a), **kw)

    _flow_rows(model, "y", pairs, states, p.initial, p.transitions, g)
    _flow_rows(model, "x", pairs, states, p.initial, z.transitions, 1.0)
    x = model.families["x"]
    into_goal = {x[(s, a)]: z.transitions[(s, a)].get(GOAL, 0.0) for s, a in pairs}
    model.goal_row = model.add_row("goal", into_goal, "=", 1.0)

    d = model.families["d"]
    by_state = {}
    for s, a in pairs:
        by_state.setdefault(s, []).append(d[(s, a)])
    for s in states:
        model.add_row(f"choose[{state_name(s)}]", {j: 1.0 for j in by_state[s]}, "<", 1.0)

    for fam in ("x", "y"):
        for s, a in pairs:
            model.indicators.append(Indicator(d[(s, a)], model.families[fam][(s, a)], fam))

    y = model.families["y"]
    model.objective = {y[(s, a)]: p.reward(s, a) for s, a in pairs if p.reward(s, a) != 0.0}
    return model


def prune_losing_actions(model: MILPModel, z: AbsorbingMDP) -> MILPModel:
    """Fix to zero every selector whose action cannot belong to an almost-sure winning policy.

    Any policy reaching the goal with probability one only visits winning
    states and only uses actions whose successors stay winning, so the
    optimum is unchanged.
    """
    reach = qualitative_pr1_reach(z)
    out = model.copy()
    for s, a in model.pairs:
        if a not in reach.winning_actions.get(s, ()):
            for fam, idx in model.families.items():
                out.ub[idx[(s, a)]] = 0.0
    return out


def linearize_indicators(model: MILPModel, bigM: Mapping[str, float]) -> MILPModel:
    """Replace each indicator by ``v <= M * d`` with ``M`` chosen per variable family."""
    missing = sorted({ind.family for ind in model.indicators} - set(bigM))
    if missing:
        raise ValueError(f"no big-M supplied for families {missing}")
    for fam, M in bigM.items():
        if not (M > 0 and math.isfinite(M)):
            raise ValueError(f"big-M for {fam!r} must be positive and finite, got {M}")
    out = model.copy()
    for ind in model.indicators:
        M = float(bigM[ind.family])
        out.add_row(f"bigm_{model.names[ind.var]}", {ind.var: 1.0, ind.binary: -M}, "<", 0.0)
    out.indicators = []
    return out


@dataclass(frozen=True)
class RewardConstraintSpec:
    """Require the expected discounted return of ``reward`` (over MDP pairs) at discount ``gamma`` to exceed ``d``."""

    reward: Mapping
    gamma: float
    d: float
    margin: float = STRICT_MARGIN

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"constraint discount must lie in (0, 1), got {self.gamma}")


def product_reward(p: ProductMDP, reward: Mapping, gamma: float):
    """Lift an MDP reward to the product with the 1/gamma compensation in the accepting part."""
    qf = p.automaton.partition[1]
    out = {}
    for s, a in p.pairs():
        if s in (TRAP, GOAL) or is_eps(a):
            continue
        r = float(reward.get((s[0], a), 0.0))
        out[(s, a)] = r / gamma if s[1] in qf else r
    return out


def add_reward_constraints(model: MILPModel, p: ProductMDP, specs: Sequence[RewardConstraintSpec]) -> MILPModel:
    if not specs:
        return model
    out = model.copy()
    d = out.families["d"]
    for k, spec in enumerate(specs, start=1):
        fam = f"y{k}"
        if fam in out.families:
            raise ValueError(f"variable family {fam!r} already present")
        out.families[fam] = {}
        for s, a in out.pairs:
            out.families[fam][(s, a)] = out.add_var(var_name(fam, s, a), ub=1.0 / (1.0 - spec.gamma))
        _flow_rows(out, fam, out.pairs, out.states, out.initial, p.transitions, spec.gamma)
        r = product_reward(p, spec.reward, spec.gamma)
        idx = out.families[fam]
        if spec.d != -math.inf:
            coefs = {idx[pair]: r.get(pair, 0.0) for pair in out.pairs if r.get(pair, 0.0) != 0.0}
            out.add_row(f"return_{fam}", coefs, ">", spec.d + spec.margin)
        for pair in out.pairs:
            out.indicators.append(Indicator(d[pair], idx[pair], fam))
    return out


# -- LP-style text ----------------------------------------------------------
#
#   \ comment lines
#   Maximize
#    obj: 2 y[a] - 1.5 y[b]
#   Subject To
#    row_name: 1 x[a] - 0.9 y[b] = 1
#   Bounds
#    0 <= x[a] <= inf
#   Binaries
#    d[a]
#   Indicators
#    ind_name: d[a] = 0 -> x[a] = 0
#   End
#
# Names are percent-encoded so they never contain whitespace.

_SAFE = "[]|,:@*_-.+!&()<>=/'\"#$^~{}?;`"
_SENSE_TXT = {"<": "<=", "=": "=", ">": ">="}


def _enc(name: str) -> str:
    return quote(name, safe=_SAFE)


def _fmt(v: float) -> str:
    if v == math.inf:
        return "inf"
    if v == -math.inf:
        return "-inf"
    return repr(float(v))


def _linear(coefs: Mapping, names) -> str:
    terms = []
    for j in sorted(coefs):
        c = coefs[j]
        sign = "-" if c < 0 else "+"
        terms.append(f"{sign} {_fmt(abs(c))} {_enc(names[j])}")
    if not terms:
        return "0"
    text = " ".join(terms)
    return text[2:] if text.startswith("+ ") else text


def export_lp_text(model: MILPModel) -> str:
    names = model.names
    lines = [f"\\ format_version {FORMAT_VERSION}", "Maximize", f" obj: {_linear(model.objective, names)}",
             "Subject To"]
    for r in model.rows:
        lines.append(f" {_enc(r.name)}: {_linear(r.coefs, names)} {_SENSE_TXT[r.sense]} {_fmt(r.rhs)}")
    lines.append("Bounds")
    for j, n in enumerate(names):
        if not model.binary[j]:
            lines.append(f" {_fmt(model.lb[j])} <= {_enc(n)} <= {_fmt(model.ub[j])}")
    lines.append("Binaries")
    lines.extend(f" {_enc(n)}" for j, n in enumerate(names) if model.binary[j])
    lines.append("Indicators")
    for k, ind in enumerate(model.indicators):
        lines.append(f" {ind.family}_{k}: {_enc(names[ind.binary])} = 0 -> {_enc(names[ind.var])} = 0")
    lines.append("End")
    return "\n".join(lines) + "\n"


_TERM = re.compile(r"([+-])?\s*(\S+)\s+(\S+)")


def _parse_linear(text: str, index: dict, lineno: int) -> dict:
    text = text.strip()
    if text == "0":
        return {}
    if not text.startswith(("+", "-")):
        text = "+ " + text
    tokens = text.split()
    if len(tokens) % 3:
        raise ModelFormatError(f"line {lineno}: malformed linear expression")
    coefs = {}
    for k in range(0, len(tokens), 3):
        sign, num, name = tokens[k:k + 3]
        if sign not in "+-":
            raise ModelFormatError(f"line {lineno}: expected a sign, got {sign!r}")
        name = unquote(name)
        if name not in index:
            raise ModelFormatError(f"line {lineno}: unknown variable {name!r}")
        c = float(num) * (-1.0 if sign == "-" else 1.0)
        coefs[index[name]] = coefs.get(index[name], 0.0) + c
    return coefs


def import_lp_text(text: str) -> MILPModel:
    """Inverse of :func:`export_lp_text` (structure only, no product metadata)."""
    sections = {}
    current = None
    order = ("Maximize", "Subject To", "Bounds", "Binaries", "Indicators")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("\\"):
            continue
        if line in order:
            current = line
            sections[current] = []
            continue
        if line == "End":
            break
        if current is None:
            raise ModelFormatError(f"line {lineno}: content outside any section")
        sections[current].append((lineno, line))
    for sec in order:
        if sec not in sections:
            raise ModelFormatError(f"missing section {sec!r}")

    # declare variables first: continuous from Bounds, binaries from Binaries
    model = MILPModel()
    bounds = []
    for lineno, line in sections["Bounds"]:
        parts = line.split()
        if len(parts) != 5 or parts[1] != "<=" or parts[3] != "<=":
            raise ModelFormatError(f"line {lineno}: malformed bound")
        bounds.append((unquote(parts[2]), float(parts[0]), float(parts[4])))
    for name, lo, hi in bounds:
        model.add_var(name, lb=lo, ub=hi)
    for lineno, line in sections["Binaries"]:
        model.add_var(unquote(line), binary=True)
    index = model._index

    for lineno, line in sections["Maximize"]:
        head, _, body = line.partition(": ")
        model.objective = _parse_linear(body, index, lineno)
    for lineno, line in sections["Subject To"]:
        head, _, body = line.partition(": ")
        for txt, sense in (("<=", "<"), (">=", ">"), ("=", "=")):
            if f" {txt} " in body:
                lhs, rhs = body.rsplit(f" {txt} ", 1)
                model.add_row(unquote(head), _parse_linear(lhs, index, lineno), sense, float(rhs))
                break
        else:
            raise ModelFormatError(f"line {lineno}: constraint without a sense")
    for lineno, line in sections["Indicators"]:
        head, _, body = line.partition(": ")
        m = re.fullmatch(r"(\S+) = 0 -> (\S+) = 0", body)
        if not m:
            raise ModelFormatError(f"line {lineno}: malformed indicator")
        fam = head.rsplit("_", 1)[0]
        b, v = unquote(m.group(1)), unquote(m.group(2))
        if b not in index or v not in index:
            raise ModelFormatError(f"line {lineno}: unknown variable in indicator")
        model.indicators.append(Indicator(index[b], index[v], fam))
    return model


def write_solution(path, model: MILPModel, sol: MILPSolution) -> None:
    data = {
        "format_version": FORMAT_VERSION,
        "objective": sol.objective,
        "variables": {n: float(sol.values[j]) for j, n in enumerate(model.names)},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=1, sort_keys=False)
        fh.write("\n")


def read_solution(path, model: MILPModel) -> MILPSolution:
    """Load a solution produced elsewhere; missing variables default to zero."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict) or "variables" not in data or not isinstance(data["variables"], dict):
        raise ModelFormatError("solution file needs a 'variables' object")
    values = np.zeros(model.n_vars)
    for name, v in data["variables"].items():
        if name not in model._index:
            raise ModelFormatError(f"solution names unknown variable {name!r}")
        values[model.var(name)] = float(v)
    obj = float(model.objective_vector() @ values)
    if "objective" in data and abs(float(data["objective"]) - obj) > 1e-6 * (1 + abs(obj)):
        raise ModelFormatError(f"stated objective {data['objective']} disagrees with recomputed {obj}")
    return MILPSolution("feasible", values, obj, math.inf)

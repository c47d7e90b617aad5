"""Generators for the case-study MDPs and the built-in automata."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .automata import LDGBA, Transition, degeneralize
from .ltl import parse_ltl
from .mdp import LabeledMDP

FORMAT_VERSION = 1

EXAMPLE1_AP = frozenset({"l0", "l1", "m"})
EXAMPLE1_FORMULA = "(F G l0 | F G l1) & G !m"

# Cells of the 2x2 grid: I II on the top row, III IV below.
EXAMPLE1_LABELS = {"I": {"l0"}, "II": {"m"}, "III": set(), "IV": {"l1"}}
EXAMPLE1_HORIZONTAL = {"I": "II", "II": "I", "III": "IV", "IV": "III"}
EXAMPLE1_VERTICAL = {"I": "III", "III": "I", "II": "IV", "IV": "II"}
EXAMPLE1_REWARDS = {("I", "rest"): 1.0, ("IV", "rest"): 2.0, ("III", "go"): -0.5, ("II", "rest"): 3.0}


def _check_p(p: float) -> None:
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")


def build_example1(p: float = 0.8, gamma: float = 0.9, rewards: Optional[Mapping] = None) -> LabeledMDP:
    """Four-cell grid: ``go`` moves within the row with probability ``p``, within the column otherwise."""
    _check_p(p)
    rewards = EXAMPLE1_REWARDS if rewards is None else rewards
    states = ("I", "II", "III", "IV")
    actions = {s: ("go", "rest") for s in states}
    trans = {}
    for s in states:
        trans[(s, "rest")] = {s: 1.0}
        trans[(s, "go")] = {EXAMPLE1_HORIZONTAL[s]: p, EXAMPLE1_VERTICAL[s]: 1.0 - p}
    return LabeledMDP(states, actions, trans, dict(rewards), "III", gamma, ap=EXAMPLE1_AP, labels=EXAMPLE1_LABELS)


# -- safe motion planning ----------------------------------------------------
#
# Three 2x2 quadrants share corner cell 0.  In each quadrant the cell
# vertically adjacent to 0 is an l0 cell, the horizontally adjacent one an l1
# cell and the diagonal one is unsafe (m).

QUADRANTS = {
    # action: (vertical neighbour of 0, horizontal neighbour of 0, diagonal cell)
    "ur": ("1", "2", "3"),
    "ul": ("4", "5", "6"),
    "ll": ("7", "9", "8"),
}

SAFE_MOTION_PRESETS = {
    # reward of resting in the (l0 cell, l1 cell) of each quadrant
    "ur": {"ur": (1.0, 0.8), "ul": (0.5, 0.4), "ll": (0.3, 0.2)},
    "ul": {"ur": (0.3, 0.2), "ul": (1.0, 0.8), "ll": (0.5, 0.4)},
    "ll": {"ur": (0.5, 0.4), "ul": (0.3, 0.2), "ll": (1.0, 0.8)},
}


def safe_motion_rewards(preset: str = "ur") -> dict:
    if preset not in SAFE_MOTION_PRESETS:
        raise ValueError(f"unknown reward preset {preset!r}; choose from {sorted(SAFE_MOTION_PRESETS)}")
    out = {}
    for quad, (r0, r1) in SAFE_MOTION_PRESETS[preset].items():
        v, h, _ = QUADRANTS[quad]
        out[(v, "rest")] = r0
        out[(h, "rest")] = r1
    return out


def build_safe_motion(p: float = 0.8, gamma: float = 0.9, rewards: Optional[Mapping] = None) -> LabeledMDP:
    _check_p(p)
    rewards = safe_motion_rewards("ur") if rewards is None else rewards
    states = tuple(str(i) for i in range(10))
    labels = {"0": set()}
    actions = {"0": ("rest", "ur", "ul", "ll")}
    trans = {("0", "rest"): {"0": 1.0}}
    vertical, horizontal = {}, {}
    for quad, (v, h, diag) in QUADRANTS.items():
        labels.update({v: {"l0"}, h: {"l1"}, diag: {"m"}})
        trans[("0", quad)] = {v: p, h: 1.0 - p}
        vertical.update({v: "0", h: diag, diag: h})
        horizontal.update({v: diag, h: "0", diag: v})
    for s in states[1:]:
        actions[s] = ("rest", "move")
        trans[(s, "rest")] = {s: 1.0}
        trans[(s, "move")] = {vertical[s]: p, horizontal[s]: 1.0 - p}
    return LabeledMDP(states, actions, trans, dict(rewards), "0", gamma, ap=EXAMPLE1_AP, labels=labels)


# -- nursery -----------------------------------------------------------------

NURSERY_AP = frozenset({"a", "b", "c", "d"})
MOVES = {"up": (0, 1), "down": (0, -1), "left": (-1, 0), "right": (1, 0)}
SIDEWAYS = {"up": ("left", "right"), "down": ("left", "right"), "left": ("up", "down"), "right": ("up", "down")}


def cell_id(x: int, y: int) -> str:
    return f"{x}_{y}"


def parse_cell(s: str):
    x, y = s.split("_")
    return int(x), int(y)


def default_locations(w: int, h: int) -> dict:
    """Charger bottom-left, adult top-left, baby top-right, danger near the middle."""
    return {"c": (0, 0), "a": (0, h - 1), "b": (w - 1, h - 1), "d": (w // 2, h // 2 - (1 if h > 2 else 0))}


def build_nursery(w: int = 5, h: int = 4, locations: Optional[Mapping] = None, reward_mode: str = "A",
                  gamma: float = 0.9, baby_reward: float = 10.0, base_reward: float = 2.0,
                  up_reward: float = 1.0) -> LabeledMDP:
    """Grid with slip 0.8 / 0.1 / 0.1; moves into a wall leave the robot in place."""
    if w < 1 or h < 1 or w * h < 4:
        raise ValueError("the nursery needs at least four cells")
    if reward_mode not in ("A", "B"):
        raise ValueError(f"reward mode must be 'A' or 'B', got {reward_mode!r}")
    loc = default_locations(w, h) if locations is None else {k: tuple(v) for k, v in locations.items()}
    if set(loc) != set(NURSERY_AP):
        raise ValueError("locations must place exactly a, b, c and d")
    for k, (x, y) in loc.items():
        if not (0 <= x < w and 0 <= y < h):
            raise ValueError(f"location of {k} is outside the grid")
    if len(set(loc.values())) != 4:
        raise ValueError("a, b, c and d must occupy distinct cells")

    states = tuple(cell_id(x, y) for y in range(h) for x in range(w))
    labels = {cell_id(*xy): {k} for k, xy in loc.items()}
    baby = cell_id(*loc["b"])

    def dest(x, y, move):
        dx, dy = MOVES[move]
        nx, ny = x + dx, y + dy
        return cell_id(nx, ny) if 0 <= nx < w and 0 <= ny < h else cell_id(x, y)

    actions, trans, rewards = {}, {}, {}
    for y in range(h):
        for x in range(w):
            s = cell_id(x, y)
            actions[s] = tuple(MOVES)
            for a in MOVES:
                row = {}
                for move, prob in ((a, 0.8), (SIDEWAYS[a][0], 0.1), (SIDEWAYS[a][1], 0.1)):
                    t = dest(x, y, move)
                    row[t] = row.get(t, 0.0) + prob
                trans[(s, a)] = row
                if s == baby:
                    rewards[(s, a)] = baby_reward
                elif reward_mode == "B" and a == "up":
                    rewards[(s, a)] = up_reward
                else:
                    rewards[(s, a)] = base_reward
    return LabeledMDP(states, actions, trans, rewards, cell_id(*loc["c"]), gamma, ap=NURSERY_AP, labels=labels)


# -- automata ----------------------------------------------------------------

def _automaton(ap, states, initial, edges, epsilon, acceptance) -> LDGBA:
    transitions = tuple(Transition(src, parse_ltl(label, ap), dst) for src, label, dst in edges)
    return LDGBA(frozenset(ap), tuple(states), initial, transitions, tuple(epsilon),
                 tuple(frozenset(f) for f in acceptance))


def persist_ldba() -> LDGBA:
    return _automaton(
        EXAMPLE1_AP, ("0", "1", "2"), "0",
        [("0", "!m", "0"), ("1", "l0 & !m", "1"), ("2", "l1 & !m", "2")],
        [("0", "1"), ("0", "2")],
        [{1, 2}],
    )


def surveillance_ldgba() -> LDGBA:
    """Two acceptance sets for GF b & GF c & G !d.

    The initial state has no letter transitions, so runs jump at once; a
    waiting loop would accept the same words but lets a policy postpone the
    jump indefinitely, which only adds near-optimal ties for the search.
    """
    return _automaton(
        NURSERY_AP, ("i", "f"), "i",
        [
            ("f", "b & c & !d", "f"),
            ("f", "b & !c & !d", "f"),
            ("f", "!b & c & !d", "f"),
            ("f", "!b & !c & !d", "f"),
        ],
        [("i", "f")],
        [{0, 1}, {0, 2}],
    )


def two_set_ldgba() -> LDGBA:
    """Generalized automaton with F1 = {(s,e,s'), (t,f,t')} and F2 = {(u,g,u')}."""
    return _automaton(
        {"e", "f", "g"}, ("i", "s", "s'", "t", "t'", "u", "u'"), "i",
        [
            ("i", "true", "i"),
            ("s", "e", "s'"),        # 1
            ("s", "!e", "s"),
            ("s'", "true", "u"),
            ("t", "f", "t'"),        # 4
            ("t", "!f", "t"),
            ("t'", "true", "u"),
            ("u", "g", "u'"),        # 7
            ("u", "!g", "u"),
            ("u'", "e", "s"),
            ("u'", "!e", "t"),
        ],
        [("i", "s"), ("i", "t")],
        [{1, 4}, {7}],
    )


BUILTIN = {"persist-l0-or-l1": persist_ldba, "surveillance-bc-not-d": lambda: degeneralize(surveillance_ldgba())}


def builtin_ldba(name: str) -> LDGBA:
    try:
        return BUILTIN[name]()
    except KeyError:
        raise ValueError(f"unknown built-in automaton {name!r}; choose from {sorted(BUILTIN)}") from None


# -- scenario files ------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    model: str  # example1 | safe-motion | nursery
    gamma: float = 0.9
    p: float = 0.8
    width: int = 5
    height: int = 4
    locations: Optional[Mapping] = None
    reward_mode: str = "A"
    baby_reward: float = 10.0
    preset: str = "ur"
    rewards: Optional[Mapping] = None
    automaton: Optional[str] = None
    extra: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in SCENARIOS:
            raise ValueError(f"unknown scenario model {self.model!r}; choose from {sorted(SCENARIOS)}")
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be at least 1")
        _check_p(self.p)

    def build(self) -> LabeledMDP:
        return SCENARIOS[self.model][0](self)

    def default_automaton(self) -> LDGBA:
        return builtin_ldba(self.automaton or SCENARIOS[self.model][1])


def _ex1(spec: GridSpec):
    return build_example1(spec.p, spec.gamma, spec.rewards)


def _safe(spec: GridSpec):
    rewards = spec.rewards if spec.rewards is not None else safe_motion_rewards(spec.preset)
    return build_safe_motion(spec.p, spec.gamma, rewards)


def _nursery(spec: GridSpec):
    return build_nursery(spec.width, spec.height, spec.locations, spec.reward_mode, spec.gamma, spec.baby_reward)


SCENARIOS = {
    "example1": (_ex1, "persist-l0-or-l1"),
    "safe-motion": (_safe, "persist-l0-or-l1"),
    "nursery": (_nursery, "surveillance-bc-not-d"),
}

SCENARIO_SCHEMA = {
    "type": "object",
    "required": ["model"],
    "properties": {
        "format_version": {"const": FORMAT_VERSION},
        "model": {"enum": sorted(SCENARIOS)},
        "gamma": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "p": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "width": {"type": "integer", "minimum": 1},
        "height": {"type": "integer", "minimum": 1},
        "locations": {
            "type": "object",
            "additionalProperties": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
        },
        "reward_mode": {"enum": ["A", "B"]},
        "baby_reward": {"type": "number"},
        "preset": {"enum": sorted(SAFE_MOTION_PRESETS)},
        "automaton": {"enum": sorted(BUILTIN)},
        "rewards": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["state", "action", "reward"],
                "properties": {"state": {"type": "string"}, "action": {"type": "string"}, "reward": {"type": "number"}},
            },
        },
    },
    "additionalProperties": False,
}


def scenario_from_dict(data: dict) -> GridSpec:
    import jsonschema

    from .mdp import SchemaError

    try:
        jsonschema.validate(data, SCENARIO_SCHEMA)
    except jsonschema.ValidationError as err:
        path = "$" + "".join(f"[{p!r}]" if isinstance(p, str) else f"[{p}]" for p in err.absolute_path)
        raise SchemaError(err.message, path) from None
    kw = {k: v for k, v in data.items() if k not in ("format_version", "rewards")}
    if "rewards" in data:
        kw["rewards"] = {(r["state"], r["action"]): float(r["reward"]) for r in data["rewards"]}
    try:
        return GridSpec(**kw)
    except ValueError as err:
        raise SchemaError(str(err)) from None


def load_scenario(path) -> GridSpec:
    with open(path, encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


"""Command-line driver: synthesize, check and simulate LTL-constrained policies.

Exit codes:
  0  success (synth: policy verified; check: the goal is almost-surely reachable)
  1  input/output, schema or validation error
  2  reachability precondition fails: the goal cannot be reached with probability one
  3  solver stopped at a time or node limit; the incumbent and gap are reported
  4  the secondary reward constraints admit no policy
  5  the synthesized policy failed verification

The log level is read from LTLSYNTH_LOG (default WARNING).
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import jsonschema

from .automata import LDGBA, AutomatonError, degeneralize, load_automaton, validate
from .automata import SchemaError as AutomatonSchemaError
from .mdp import FORMAT_VERSION, LabeledMDP, ModelError, SchemaError, load_mdp, make_rng, simulate
from .milp import AssumptionError, RewardConstraintSpec, add_reward_constraints, build_milp, product_reward
from .policy import ExtractionError, extract_policy, occupancy_identities, policy_from_dict, verify_policy
from .product import PolicyProjectionError, ProductMDP, build_absorbing, build_product, project_policy, qualitative_pr1_reach
from .render import render_svg, render_text
from .scenarios import BUILTIN, SCENARIOS, GridSpec, builtin_ldba, load_scenario
from .solver import LIMIT, BnBOptions, NumericalError, solve_milp

log = logging.getLogger("ltlsynth")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_ASSUMPTION = 2
EXIT_LIMIT = 3
EXIT_CONSTRAINTS = 4
EXIT_UNVERIFIED = 5

LOG_ENV = "LTLSYNTH_LOG"

DEFAULT_ZETA = 0.9
DEFAULT_TIME_LIMIT = 3600.0
DEFAULT_EPISODES = 1000
DEFAULT_STEPS = 300


class InputError(Exception):
    pass


REWARD_SCHEMA = {
    "type": "object",
    "required": ["rewards"],
    "properties": {
        "format_version": {"const": FORMAT_VERSION},
        "rewards": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["state", "action", "reward"],
                "properties": {"state": {"type": "string"}, "action": {"type": "string"}, "reward": {"type": "number"}},
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}


@dataclass(frozen=True)
class ConstraintArg:
    path: str
    gamma: float
    d: float


@dataclass(frozen=True)
class RunConfig:
    scenario: Optional[str] = None
    mdp: Optional[str] = None
    automaton: Optional[str] = None
    p: Optional[float] = None
    gamma: Optional[float] = None
    zeta: float = DEFAULT_ZETA
    reward_preset: Optional[str] = None
    reward_mode: Optional[str] = None
    width: Optional[int] = None
    height: Optional[int] = None
    constraints: tuple = ()
    time_limit: float = DEFAULT_TIME_LIMIT
    gap: float = BnBOptions.gap
    lp_method: str = BnBOptions.lp_method
    seed: int = 0
    deterministic: bool = False
    out: str = "out"
    render: Optional[str] = None
    product: str = "full"
    episodes: int = DEFAULT_EPISODES

    def __post_init__(self):
        by_files = self.mdp is not None
        if by_files == (self.scenario is not None):
            raise InputError("give either --scenario or --mdp with --automaton")
        if by_files and self.automaton is None:
            raise InputError("--mdp needs --automaton")
        if not 0.0 < self.zeta < 1.0:
            raise InputError(f"--zeta must lie in (0, 1), got {self.zeta}")


def parse_constraint(text: str) -> ConstraintArg:
    """``r=<file>,gamma=<g>,d=<v>``; ``d`` may be ``-inf`` to only track the return."""
    fields = {}
    for part in text.split(","):
        key, sep, value = part.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected key=value in {part!r}")
        fields[key.strip()] = value.strip()
    missing = {"r", "gamma", "d"} - fields.keys()
    if missing or len(fields) != 3:
        raise argparse.ArgumentTypeError("constraint needs exactly r=<file>,gamma=<g>,d=<v>")
    try:
        return ConstraintArg(fields["r"], float(fields["gamma"]), float(fields["d"]))
    except ValueError as err:
        raise argparse.ArgumentTypeError(str(err)) from None


def load_reward_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise InputError(f"cannot read reward file {path}: {err}") from None
    try:
        jsonschema.validate(data, REWARD_SCHEMA)
    except jsonschema.ValidationError as err:
        raise InputError(f"reward file {path}: {err.message}") from None
    return {(r["state"], r["action"]): float(r["reward"]) for r in data["rewards"]}


# -- inputs --------------------------------------------------------------------

def _automaton_from_arg(arg: str) -> LDGBA:
    if arg in BUILTIN:
        return builtin_ldba(arg)
    loaded = load_automaton(arg)
    if not loaded.report.ok:
        raise InputError(f"automaton {arg} is not limit-deterministic:\n{loaded.report}")
    return loaded.automaton


def _grid_spec(cfg: RunConfig) -> GridSpec:
    if cfg.scenario in SCENARIOS:
        spec = GridSpec(model=cfg.scenario)
    elif Path(cfg.scenario).is_file():
        spec = load_scenario(cfg.scenario)
    else:
        raise InputError(f"unknown scenario {cfg.scenario!r}; choose from {sorted(SCENARIOS)} or give a scenario file")
    overrides = {"p": cfg.p, "gamma": cfg.gamma, "preset": cfg.reward_preset, "reward_mode": cfg.reward_mode,
                  "width": cfg.width, "height": cfg.height}
    return dataclasses.replace(spec, **{k: v for k, v in overrides.items() if v is not None})


def load_inputs(cfg: RunConfig):
    """The labelled MDP, the (single-set) automaton and a description of both."""
    if cfg.scenario is not None:
        spec = _grid_spec(cfg)
        m = spec.build()
        raw = _automaton_from_arg(cfg.automaton) if cfg.automaton else spec.default_automaton()
        desc = {"scenario": spec.model, "p": spec.p, "gamma": spec.gamma}
        if spec.model == "safe-motion":
            desc["reward_preset"] = spec.preset if spec.rewards is None else "custom"
        if spec.model == "nursery":
            desc.update(width=spec.width, height=spec.height, reward_mode=spec.reward_mode)
    else:
        m = load_mdp(cfg.mdp)
        if cfg.gamma is not None:
            m = dataclasses.replace(m, gamma=cfg.gamma)
        raw = _automaton_from_arg(cfg.automaton)
        desc = {"mdp": cfg.mdp, "gamma": m.gamma}
    desc["automaton"] = cfg.automaton or "default"
    report = validate(raw)
    if not report.ok:
        raise InputError(f"automaton is not limit-deterministic:\n{report}")
    a = degeneralize(raw) if len(raw.acceptance) > 1 else raw
    desc["automaton_states"] = len(a.states)
    return m, a, desc


def _products(m: LabeledMDP, a: LDGBA, mode: str):
    full = build_product(m, a, reachable_only=False)
    reach = build_product(m, a, reachable_only=True)
    return (full if mode == "full" else reach), len(full.product_states), len(reach.product_states)


# -- synthesis pipeline ----------------------------------------------------------

@dataclass
class SynthResult:
    status: str
    exit_code: int
    product: Optional[ProductMDP] = None
    model: object = None
    solution: object = None
    policy: object = None
    report: object = None
    identities: object = None
    metrics: dict = field(default_factory=dict)
    wall_time: float = 0.0
    message: str = ""


def synthesize(cfg: RunConfig) -> SynthResult:
    t0 = time.monotonic()
    m, a, desc = load_inputs(cfg)
    specs = []
    for c in cfg.constraints:
        specs.append(RewardConstraintSpec(load_reward_file(c.path), c.gamma, c.d))
    p, n_full, n_reach = _products(m, a, cfg.product)
    z = build_absorbing(p, cfg.zeta)
    opts = BnBOptions(gap=cfg.gap, time_limit=cfg.time_limit, deterministic=cfg.deterministic,
                      lp_method=cfg.lp_method)
    metrics = {
        "format_version": FORMAT_VERSION,
        "inputs": desc,
        "settings": {"zeta": cfg.zeta, "gap": opts.gap, "abs_gap": opts.abs_gap, "int_tol": opts.int_tol,
                     "time_limit": opts.time_limit, "lp_method": opts.lp_method, "branching": opts.branching,
                     "seed": cfg.seed, "episodes": cfg.episodes, "product": cfg.product,
                     "deterministic": cfg.deterministic},
        "product": {"states_full": n_full, "states_reachable": n_reach, "states_used": len(p.product_states),
                    "pairs": sum(1 for s, _ in p.pairs() if s in p.product_states)},
    }
    try:
        model = build_milp(p, z)
    except AssumptionError as err:
        return SynthResult("assumption", EXIT_ASSUMPTION, p, metrics=metrics, message=str(err),
                           wall_time=time.monotonic() - t0)
    model = add_reward_constraints(model, p, specs)
    metrics["model"] = {**model.counts(), "reward_constraints": len(specs)}
    sol = solve_milp(model, opts)
    metrics["solver"] = {"status": sol.status, "objective": _num(sol.objective), "bound": _num(sol.bound),
                         "gap": _num(sol.gap), "nodes": sol.nodes, "lp_solves": sol.lp_solves}
    if sol.values is None:
        status, code = ("limit", EXIT_LIMIT) if sol.status == LIMIT else ("constraints", EXIT_CONSTRAINTS)
        msg = "no feasible policy found before the limit" if status == "limit" else \
            "no deterministic policy meets the reward constraints"
        return SynthResult(status, code, p, model, sol, metrics=metrics, message=msg, wall_time=time.monotonic() - t0)
    pi = extract_policy(sol, model, p)
    report = verify_policy(pi, p, z, sol.objective, episodes=cfg.episodes, seed=cfg.seed)
    ident = occupancy_identities(sol, model, z)
    metrics["verification"] = {"passed": report.passed, "absorption_probability": report.absorption,
                               "value": report.value}
    metrics["identities"] = ident.to_dict()
    if specs:
        metrics["constraint_returns"] = []
        for k, spec in enumerate(specs, start=1):
            r = product_reward(p, spec.reward, spec.gamma)
            idx = model.families[f"y{k}"]
            metrics["constraint_returns"].append(math.fsum(sol.values[j] * r.get(pair, 0.0) for pair, j in idx.items()))
    if sol.status == LIMIT:
        status, code = "limit", EXIT_LIMIT
    elif not (report.passed and ident.passed):
        status, code = "unverified", EXIT_UNVERIFIED
    else:
        status, code = "ok", EXIT_OK
    return SynthResult(status, code, p, model, sol, pi, report, ident, metrics, time.monotonic() - t0)


def _num(v: float):
    return v if math.isfinite(v) else None


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_outputs(res: SynthResult, cfg: RunConfig) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    timing = {"format_version": FORMAT_VERSION, "wall_time_seconds": res.wall_time}
    metrics = dict(res.metrics)
    metrics["status"] = res.status
    if cfg.deterministic:
        (out / "timing.json").write_text(_dump(timing), encoding="utf-8")
    else:
        metrics["wall_time_seconds"] = res.wall_time
    (out / "metrics.json").write_text(_dump(metrics), encoding="utf-8")
    if res.policy is None:
        return
    doc = res.policy.to_dict(res.product, res.report.value, res.report.absorption)
    (out / "policy.json").write_text(_dump(doc), encoding="utf-8")
    (out / "verification.json").write_text(_dump(res.report.to_dict()), encoding="utf-8")
    if cfg.render:
        m = res.product.mdp
        if cfg.render in ("text", "both"):
            (out / "policy.txt").write_text(render_text(res.policy.choice, res.policy.provenance, m), encoding="utf-8")
        if cfg.render in ("svg", "both"):
            (out / "policy.svg").write_text(render_svg(res.policy.choice, res.policy.provenance, m), encoding="utf-8")


# -- commands ------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig) -> int:
    res = synthesize(cfg)
    write_outputs(res, cfg)
    if res.message:
        print(res.message, file=sys.stderr)
    s = res.metrics.get("solver", {})
    if res.policy is not None:
        print(f"status {res.status}: objective {s['objective']:.10g}, gap {s['gap']:.3g}, "
              f"absorption {res.report.absorption:.12g}, value {res.report.value:.10g}")
    if cfg.render in ("text", "both") and res.policy is not None:
        print(render_text(res.policy.choice, res.policy.provenance, res.product.mdp), end="")
    return res.exit_code


def cmd_check(cfg: RunConfig) -> int:
    m, a, _ = load_inputs(cfg)
    p, _, _ = _products(m, a, cfg.product)
    z = build_absorbing(p, cfg.zeta)
    reach = qualitative_pr1_reach(z)
    n = len(p.product_states)
    wins = len([s for s in reach.winning_states if s in p.product_states])
    if reach.feasible:
        print(f"feasible: {wins} of {n} product states win almost-sure reachability")
        return EXIT_OK
    print(f"infeasible: Assumption 1 fails, the initial product state cannot reach the goal with "
          f"probability one ({wins} of {n} product states win)")
    return EXIT_ASSUMPTION


def cmd_simulate(cfg: RunConfig, policy_path: str, steps: int, episodes: int, keep_runs: int) -> int:
    m, a, _ = load_inputs(cfg)
    try:
        doc = json.loads(Path(policy_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise InputError(f"cannot read policy {policy_path}: {err}") from None
    pi = policy_from_dict(doc)
    if set(doc.get("memory_states", a.states)) != set(a.states):
        raise InputError("policy memory states do not match the automaton")
    induced = project_policy(pi.choice, m, a)
    rng = make_rng(cfg.seed)
    seeds = rng.integers(0, 2**63 - 1, size=episodes)
    returns = []
    entered = {prop: 0 for prop in sorted(m.ap)}
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "runs.jsonl", "w", encoding="utf-8") as fh:
        for k, sd in enumerate(seeds):
            run = simulate(m, induced, steps, int(sd))
            returns.append(run.discounted_return)
            for prop in run.visits:
                entered[prop] += 1
            if k < keep_runs:
                fh.write(json.dumps({"episode": k, "seed": int(sd), "return": run.discounted_return,
                                     "states": [str(s) for s in run.states], "actions": list(run.actions)}) + "\n")
    n = len(returns)
    mean = math.fsum(returns) / n
    se = math.sqrt(math.fsum((r - mean) ** 2 for r in returns) / (n - 1) / n) if n > 1 else float("nan")
    rmax = max((abs(m.reward(s, act)) for s, act in m.pairs()), default=0.0)
    slack = m.gamma ** steps * rmax / (1.0 - m.gamma)
    value = doc.get("value")
    summary = {
        "format_version": FORMAT_VERSION,
        "steps": steps,
        "episodes": n,
        "seed": cfg.seed,
        "mean_discounted_return": mean,
        "std_error": _num(se),
        "truncation_bound": slack,
        "policy_value": value,
        "consistent": None if value is None or not n > 1 else abs(mean - value) <= 3 * se + slack + 1e-9,
        "episodes_entering": entered,
    }
    (out / "simulation.json").write_text(_dump(summary), encoding="utf-8")
    print(f"{n} episodes x {steps} steps: mean return {mean:.6g} (se {se:.3g}); "
          + ", ".join(f"{k}: {v}" for k, v in entered.items()))
    return EXIT_OK


# -- argument parsing ----------------------------------------------------------

def _add_common(sp: argparse.ArgumentParser) -> None:
    src = sp.add_argument_group("model")
    src.add_argument("--scenario", help=f"built-in scenario ({', '.join(sorted(SCENARIOS))}) or scenario JSON file")
    src.add_argument("--mdp", help="labelled MDP JSON file")
    src.add_argument("--automaton", help=f"automaton JSON file or built-in id ({', '.join(sorted(BUILTIN))})")
    src.add_argument("--p", type=float, help="slip parameter of the scenario")
    src.add_argument("--gamma", type=float, help="discount factor")
    src.add_argument("--reward-preset", help="safe-motion reward preset (ur, ul, ll)")
    src.add_argument("--reward-mode", choices=("A", "B"), help="nursery reward mode")
    src.add_argument("--width", type=int, help="nursery grid width")
    src.add_argument("--height", type=int, help="nursery grid height")
    src.add_argument("--zeta", type=float, default=DEFAULT_ZETA, help="accepting-transition retention probability")
    src.add_argument("--product", choices=("full", "reachable"), default="full",
                     help="full product S x Q or only its part reachable from the initial state")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ltlsynth", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    sy = sub.add_parser("synth", help="synthesize and verify an optimal policy")
    _add_common(sy)
    sy.add_argument("--constraint", action="append", type=parse_constraint, default=[],
                    metavar="r=FILE,gamma=G,d=V", help="secondary discounted-reward constraint (repeatable)")
    sy.add_argument("--time-limit", type=float, default=DEFAULT_TIME_LIMIT)
    sy.add_argument("--gap", type=float, default=BnBOptions.gap, help="relative MIP gap")
    sy.add_argument("--lp", dest="lp_method", choices=("auto", "simplex", "highs"), default=BnBOptions.lp_method,
                    help="LP method for node relaxations")
    sy.add_argument("--deterministic", action="store_true",
                    help="byte-stable outputs; wall time goes to timing.json")
    sy.add_argument("--episodes", type=int, default=DEFAULT_EPISODES, help="Monte-Carlo episodes for verification")
    sy.add_argument("--render", nargs="?", const="text", choices=("text", "svg", "both"))

    ck = sub.add_parser("check", help="only test almost-sure reachability of the goal")
    _add_common(ck)

    sm = sub.add_parser("simulate", help="replay a policy on the original MDP")
    _add_common(sm)
    sm.add_argument("--policy", required=True, help="policy JSON written by synth")
    sm.add_argument("--steps", type=int, default=DEFAULT_STEPS)
    sm.add_argument("--episodes", type=int, default=100)
    sm.add_argument("--keep-runs", type=int, default=10, help="episodes written to runs.jsonl")
    return ap


def _config(ns: argparse.Namespace) -> RunConfig:
    names = {f.name for f in dataclasses.fields(RunConfig)}
    kw = {k: v for k, v in vars(ns).items() if k in names and v is not None}
    if "constraint" in vars(ns):
        kw["constraints"] = tuple(ns.constraint)
    return RunConfig(**kw)


def main(argv: Optional[Sequence[str]] = None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    ns = build_parser().parse_args(argv)
    try:
        cfg = _config(ns)
        if ns.command == "synth":
            return cmd_synth(cfg)
        if ns.command == "check":
            return cmd_check(cfg)
        return cmd_simulate(cfg, ns.policy, ns.steps, ns.episodes, ns.keep_runs)
    except AssumptionError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (InputError, SchemaError, AutomatonSchemaError, AutomatonError, ModelError, ExtractionError,
            PolicyProjectionError, NumericalError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

"""Deterministic product policies read off MILP solutions, and their verification."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mdp import MDP, StationaryPolicy, horizon_for, make_rng, monte_carlo_return, policy_value, state_name
from .milp import FORMAT_VERSION, MILPModel, MILPSolution
from .product import GOAL, TRAP, AbsorbingMDP, ProductMDP, is_eps, project_policy

FROM_DELTA = "from-delta"
COMPLETED = "completed-default"
UNREACHABLE = "unreachable"

SELECT_THRESHOLD = 0.5


class ExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class ProductPolicy:
    choice: Mapping
    provenance: Mapping

    def stationary(self, m: MDP) -> StationaryPolicy:
        """Total point-mass policy on ``m``, sinks included."""
        full = dict(self.choice)
        for s in m.states:
            if s not in full:
                full[s] = m.actions[s][0]
        return StationaryPolicy.deterministic(full)

    def to_dict(self, p: ProductMDP, value: float, absorption: float) -> dict:
        choices = [
            {"mdp_state": s, "memory": q, "action": self.choice[(s, q)], "provenance": self.provenance[(s, q)]}
            for s, q in sorted(self.choice, key=state_name)
        ]
        return {
            "format_version": FORMAT_VERSION,
            "initial": {"mdp_state": p.initial[0], "memory": p.initial[1]},
            "memory_states": list(p.automaton.states),
            "choices": choices,
            "value": value,
            "absorption_probability": absorption,
        }


def policy_from_dict(data: Mapping) -> ProductPolicy:
    try:
        choice = {(c["mdp_state"], c["memory"]): c["action"] for c in data["choices"]}
        prov = {(c["mdp_state"], c["memory"]): c.get("provenance", FROM_DELTA) for c in data["choices"]}
    except (KeyError, TypeError) as err:
        raise ExtractionError(f"malformed policy document: {err}") from None
    return ProductPolicy(choice, prov)


def _graph_reachable(m: MDP, start) -> set:
    seen = {start}
    queue = deque([start])
    while queue:
        s = queue.popleft()
        for a in m.actions[s]:
            for t, prob in m.transitions[(s, a)].items():
                if prob > 0 and t not in seen:
                    seen.add(t)
                    queue.append(t)
    return seen


def _default_action(actions) -> str:
    return min(actions, key=str)


def extract_policy(sol: MILPSolution, model: MILPModel, p: ProductMDP,
                   support_tol: float = 1e-9) -> ProductPolicy:
    """Selected actions where a selector is on; lexicographically smallest action elsewhere."""
    if sol.values is None:
        raise ExtractionError("solution carries no values")
    d = model.families["d"]
    occ = [f for f in model.families if f != "d"]
    by_state = {}
    for s, a in model.pairs:
        by_state.setdefault(s, []).append(a)
    reachable = _graph_reachable(p, p.initial)
    choice, prov = {}, {}
    for s in model.states:
        picked = [a for a in by_state[s] if sol.values[d[(s, a)]] >= SELECT_THRESHOLD]
        if len(picked) > 1:
            raise ExtractionError(f"several actions selected at {state_name(s)}: {picked}")
        if picked:
            choice[s], prov[s] = picked[0], FROM_DELTA
            continue
        mass = max((sol.values[model.families[f][(s, a)]] for f in occ for a in by_state[s]), default=0.0)
        if mass > support_tol:
            raise ExtractionError(f"state {state_name(s)} carries occupancy {mass:g} but no selected action")
        choice[s] = _default_action(by_state[s])
        prov[s] = COMPLETED if s in reachable else UNREACHABLE
    return ProductPolicy(choice, prov)


@dataclass(frozen=True)
class OccupancyIdentities:
    discounted_mass: float  # sum of y, expected 1/(1-gamma)
    goal_inflow: float  # flow of x into the goal, expected 1
    support_agrees: bool  # x and y vanish on the same pairs
    max_selected: int  # largest number of selectors set at one state
    gamma: float

    @property
    def passed(self) -> bool:
        return (abs(self.discounted_mass - 1.0 / (1.0 - self.gamma)) <= 1e-6
                and abs(self.goal_inflow - 1.0) <= 1e-9
                and self.support_agrees and self.max_selected <= 1)

    def to_dict(self) -> dict:
        return {"discounted_mass": self.discounted_mass, "goal_inflow": self.goal_inflow,
                "support_agrees": self.support_agrees, "max_selected": self.max_selected,
                "passed": self.passed}


def occupancy_identities(sol: MILPSolution, model: MILPModel, z: AbsorbingMDP,
                         support_tol: float = 0.0) -> OccupancyIdentities:
    """Mass, goal inflow, support agreement and selector counts of a solution.

    Counted over the pairs of the base flows only; the goal inflow is
    recomputed from the absorbing MDP rather than read off the goal row.
    Solver incumbents carry exact zeros off the policy's reach, so supports
    are compared against zero by default.
    """
    v = sol.values
    x, y, d = model.families["x"], model.families["y"], model.families["d"]
    mass = float(sum(v[j] for j in y.values()))
    inflow = math.fsum(v[x[(s, a)]] * z.transitions[(s, a)].get(GOAL, 0.0) for s, a in model.pairs)
    agrees = all((v[x[pair]] > support_tol) == (v[y[pair]] > support_tol) for pair in model.pairs)
    per_state = {}
    for (s, a), j in d.items():
        per_state[s] = per_state.get(s, 0) + int(v[j] >= SELECT_THRESHOLD)
    return OccupancyIdentities(mass, inflow, bool(agrees), max(per_state.values(), default=0), model.gamma)


# -- verification --------------------------------------------------------------

def absorption_probability(z: MDP, policy: StationaryPolicy, goal=GOAL) -> dict:
    """Probability of eventually reaching ``goal`` from every state, by one sparse solve."""
    from .mdp import induced_chain

    P, _ = induced_chain(z, policy)
    idx = z.index
    g = idx[goal]
    # states with a path to the goal
    Pt = P.T.tocsr()
    can = np.zeros(len(z.states), dtype=bool)
    can[g] = True
    stack = [g]
    while stack:
        j = stack.pop()
        for i in Pt.indices[Pt.indptr[j]:Pt.indptr[j + 1]]:
            if not can[i]:
                can[i] = True
                stack.append(i)
    h = np.zeros(len(z.states))
    h[g] = 1.0
    trans = np.flatnonzero(can & (np.arange(len(z.states)) != g))
    if len(trans):
        Q = P[trans][:, trans]
        b = np.asarray(P[trans][:, [g]].todense()).ravel()
        A = sp.identity(len(trans), format="csc") - Q.tocsc()
        h[trans] = spla.spsolve(A, b) if len(trans) > 1 else b / A.toarray()[0, 0]
    return {s: float(min(1.0, max(0.0, h[i]))) for s, i in idx.items()}


@dataclass(frozen=True)
class VerificationReport:
    absorption: float
    value: float
    objective: float
    mc_episodes: int = 0
    mc_mean: float = float("nan")
    mc_std_error: float = float("nan")
    mc_truncation: float = 0.0
    buchi_fraction: float = float("nan")
    horizon: int = 0
    flags: tuple = ()

    @property
    def value_ok(self) -> bool:
        return abs(self.value - self.objective) <= 1e-6 * (1.0 + abs(self.objective))

    @property
    def absorption_ok(self) -> bool:
        return self.absorption >= 1.0 - 1e-9

    @property
    def mc_ok(self) -> bool:
        if self.mc_episodes == 0:
            return True
        return abs(self.mc_mean - self.value) <= 3.0 * self.mc_std_error + self.mc_truncation + 1e-9

    @property
    def passed(self) -> bool:
        return self.value_ok and self.absorption_ok

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "absorption_probability": self.absorption,
            "value": self.value,
            "objective": self.objective,
            "value_matches_objective": self.value_ok,
            "almost_sure": self.absorption_ok,
            "monte_carlo": {
                "episodes": self.mc_episodes,
                "horizon": self.horizon,
                "mean": None if math.isnan(self.mc_mean) else self.mc_mean,
                "std_error": None if math.isnan(self.mc_std_error) else self.mc_std_error,
                "consistent": self.mc_ok,
                "accepting_recurrence_fraction": None if math.isnan(self.buchi_fraction) else self.buchi_fraction,
            },
            "flags": list(self.flags),
            "passed": self.passed,
        }


def buchi_statistics(p: ProductMDP, pol: StationaryPolicy, episodes: int, horizon: int, seed: int = 0) -> float:
    """Fraction of runs that take an accepting transition after their last epsilon jump
    and again in the second half of the horizon."""
    rng = make_rng(seed)
    acc = p.accepting
    good = 0
    for _ in range(episodes):
        draws = rng.random(horizon)
        s = p.initial
        last_eps = -1
        hits = []
        for t in range(horizon):
            a = next(iter(pol.dist[s]))
            nxt = p.sample(s, a, draws[t])
            if is_eps(a):
                last_eps = t
            elif (s, a, nxt) in acc:
                hits.append(t)
            s = nxt
            if s == TRAP:
                break
        if hits and hits[-1] > last_eps and hits[-1] >= horizon // 2:
            good += 1
    return good / episodes if episodes else float("nan")


def verify_policy(pi: ProductPolicy, p: ProductMDP, z: AbsorbingMDP, objective: float,
                  episodes: int = 0, seed: int = 0, horizon: Optional[int] = None,
                  project: bool = True) -> VerificationReport:
    """Exact absorption and value checks, optionally corroborated by simulation.

    The Monte-Carlo return is measured on the original MDP by executing the
    projected finite-memory policy, so it also exercises the projection.
    """
    pol_p = pi.stationary(p)
    pol_z = pi.stationary(z)
    absorption = absorption_probability(z, pol_z)[z.initial]
    value = policy_value(p, pol_p, tol=1e-11)[p.initial]
    flags = []
    kw = {}
    if episodes:
        H = horizon or horizon_for(p.gamma, 1e-8)
        if project:
            induced = project_policy(pi.choice, p.mdp, p.automaton)
            mc = monte_carlo_return(p.mdp, induced, episodes, H, seed)
        else:
            mc = monte_carlo_return(p, pol_p, episodes, H, seed)
        frac = buchi_statistics(p, pol_p, min(episodes, 2000), H, seed + 1)
        if frac < 0.99:
            flags.append(f"only {frac:.3f} of simulated runs revisit an accepting transition late in the horizon")
        kw = dict(mc_episodes=episodes, mc_mean=mc.mean, mc_std_error=mc.std_error,
                  mc_truncation=mc.truncation_bound, buchi_fraction=frac, horizon=H)
    report = VerificationReport(absorption, value, objective, flags=tuple(flags), **kw)
    if not report.absorption_ok:
        flags.append(f"goal absorption probability {absorption:.12g} < 1")
    if not report.value_ok:
        flags.append(f"policy value {value:.12g} differs from objective {objective:.12g}")
    if episodes and not report.mc_ok:
        flags.append("Monte-Carlo mean outside 3 standard errors of the policy value")
    return VerificationReport(absorption, value, objective, flags=tuple(flags), **kw)

"""Best-first branch-and-bound over binary selectors with native indicator handling.

At a node every selector is free, fixed to 0 or fixed to 1.  Fixing a
selector to 0 also fixes the continuous variables it controls to 0; fixing it
to 1 leaves them free.  Indicators of free selectors are dropped, so each
node LP is a relaxation of the node's MILP.

Without the indicators the relaxation falls apart into independent blocks:
one per flow family, plus the packing rows.  The expected-visit block has no
objective and is badly scaled (visit counts of near-optimal policies reach
1e7 and beyond), so its feasibility is decided exactly by an almost-sure
reachability test on the allowed pairs instead of by an LP.  Candidates are
the deterministic policies read off the relaxed support; their flows are
computed by sparse linear solves.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
import scipy.sparse.linalg as spla

from .lp import OPTIMAL as LP_OPTIMAL, LPProblem, LPSolution, solve_lp
from .milp import MILPModel, MILPSolution

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
LIMIT = "limit"


class NumericalError(RuntimeError):
    pass


@dataclass(frozen=True)
class BnBOptions:
    int_tol: float = 1e-6
    gap: float = 1e-6
    abs_gap: float = 1e-9
    time_limit: float = 3600.0
    node_limit: Optional[int] = None
    deterministic: bool = True
    branching: str = "most-fractional"
    lp_method: str = "auto"
    support_tol: float = 1e-9
    heuristic: bool = True
    heuristic_every: int = 20

    def __post_init__(self):
        for name in ("int_tol", "gap", "support_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.branching not in ("most-fractional", "first-violated"):
            raise ValueError(f"unknown branching rule {self.branching!r}")


# group totals below this are treated as noise when computing shares
SHARE_FLOOR = 1e-7

# below this many matrix entries the in-house simplex is used by "auto"
AUTO_SIMPLEX_ENTRIES = 150_000


def _lp_method(opts: BnBOptions, lp: LPProblem) -> str:
    if opts.lp_method != "auto":
        return opts.lp_method
    m, n = lp.shape
    return "simplex" if m * (n + 2 * m) <= AUTO_SIMPLEX_ENTRIES else "highs"


def _refined_solve(M: sp.csc_matrix, rhs: np.ndarray, rounds: int = 4) -> Optional[np.ndarray]:
    """Sparse LU solve with iterative refinement, residuals in extended precision.

    Visit counts of near-optimal policies make these systems condition ~1e10;
    plain double precision then misses the goal identity by ~1e-8.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        try:
            lu = spla.splu(M)
        except (RuntimeError, spla.MatrixRankWarning):
            return None
    M_ext = M.astype(np.longdouble)
    b_ext = rhs.astype(np.longdouble)
    x = lu.solve(rhs).astype(np.longdouble)
    for _ in range(rounds):
        res = b_ext - M_ext @ x
        if not np.all(np.isfinite(res)):
            return None
        x = x + lu.solve(res.astype(float))
    out = x.astype(float)
    return out if np.all(np.isfinite(out)) else None


@dataclass(frozen=True)
class _Block:
    kind: str  # packing | reach | free | lp
    cols: np.ndarray
    rows: np.ndarray
    lp: Optional[LPProblem]
    method: Optional[str]
    family: Optional[str]


@dataclass(order=True)
class _Node:
    key: tuple
    fixed: dict = field(compare=False)
    bound: float = field(compare=False)
    depth: int = field(compare=False)


class _Search:
    def __init__(self, model: MILPModel, opts: BnBOptions):
        self.model = model
        self.opts = opts
        self.lp = model.to_lp()
        self.n = model.n_vars
        self.binaries = [j for j in range(self.n) if model.binary[j]]
        self.linked = {j: [] for j in self.binaries}
        self.link_family = {}
        for ind in model.indicators:
            self.linked[ind.binary].append(ind.var)
            self.link_family[ind.var] = ind.family
        # packing rows: sum of binaries <= 1
        self.groups = []
        self.group_of = {}
        for r in model.rows:
            if (r.sense == "<" and abs(r.rhs - 1.0) < 1e-12 and r.coefs
                    and all(model.binary[j] and c == 1.0 for j, c in r.coefs.items())):
                gid = len(self.groups)
                members = sorted(r.coefs)
                self.groups.append(members)
                for j in members:
                    self.group_of.setdefault(j, gid)
        self.A = self.lp.A
        self.absA = abs(self.A).tocsr()
        self.lp_solves = 0
        self.flows = self._flow_structure()
        self._graph = self._flow_graph()
        self.blocks = self._blocks()
        if self.flows is not None:
            # for each reach column, the columns of every continuous family on the same pair
            fams = [f for f in model.families if f != "d"]
            self.pair_cols = np.zeros((self.n, len(fams)), dtype=int)
            for k, fam in enumerate(fams):
                for pair, j in model.families[fam].items():
                    for f2 in fams:
                        self.pair_cols[model.families[f2][pair], k] = j

    def _flow_structure(self):
        """Per-family flow rows and selector links, or None if the model lacks them."""
        model = self.model
        if not model.flow_rows or "d" not in model.families:
            return None
        covered = set(model.families["d"].values())
        for fam in model.flow_rows:
            covered.update(model.families[fam].values())
        if len(covered) != self.n:
            return None
        d = model.families["d"]
        selector_state = {j: s for (s, a), j in d.items()}
        pair_of = {j: pair for pair, j in d.items()}
        fams = {}
        for fam, rows in model.flow_rows.items():
            state_of_row = {i: s for s, i in rows.items()}
            fams[fam] = (rows, state_of_row, model.families[fam])
        return selector_state, pair_of, fams, self.A.tocsc()

    # -- node LP ---------------------------------------------------------------

    def propagate(self, fixed: dict) -> Optional[dict]:
        """Fix siblings of selectors set to 1; None if a packing row is violated."""
        fixed = dict(fixed)
        changed = True
        while changed:
            changed = False
            for members in self.groups:
                ones = [j for j in members if fixed.get(j) == 1]
                if len(ones) > 1:
                    return None
                if ones:
                    for j in members:
                        if j != ones[0] and fixed.get(j) != 0:
                            if fixed.get(j) == 1:
                                return None
                            fixed[j] = 0
                            changed = True
        return fixed

    def bounds(self, fixed: dict):
        lb = self.lp.lb.copy()
        ub = self.lp.ub.copy()
        for j, v in fixed.items():
            if v == 0:
                ub[j] = 0.0
                for k in self.linked[j]:
                    ub[k] = 0.0
            else:
                lb[j] = 1.0
        return lb, ub

    def _blocks(self):
        """Connected components of the relaxation, each tagged with how it is solved."""
        m, n = self.lp.shape
        A = self.A
        big = sp.bmat([[None, A], [A.T, None]], format="csr")
        _, label = connected_components(big, directed=False)
        row_label, col_label = label[:m], label[m:]
        reach_rows = set()
        reach_family = None
        if self._graph is not None:
            for fam, (states, arcs, has_goal) in self._graph[0].items():
                if has_goal:
                    reach_family = fam
                    reach_rows = set(self.model.flow_rows[fam].values()) | {self.model.goal_row}
        blocks = []
        for lab in np.unique(col_label):
            cols = np.flatnonzero(col_label == lab)
            rows = np.flatnonzero(row_label == lab)
            if self._is_packing(A, cols, rows):
                kind = "packing"
            elif reach_family is not None and set(rows.tolist()) == reach_rows and not np.any(self.lp.c[cols]):
                kind = "reach"
            elif len(rows) == 0:
                kind = "free"
            else:
                kind = "lp"
            sub = LPProblem(self.lp.c[cols], A[rows][:, cols].tocsr(), self.lp.senses[rows], self.lp.b[rows],
                            self.lp.lb[cols], self.lp.ub[cols]) if kind == "lp" else None
            method = _lp_method(self.opts, sub) if sub is not None else None
            blocks.append(_Block(kind, cols, rows, sub, method, reach_family if kind == "reach" else None))
        return blocks

    def _is_packing(self, A, cols, rows) -> bool:
        """Cost-free binaries in choose-at-most-one rows: the relaxation is trivial."""
        if not all(self.model.binary[j] for j in cols) or np.any(self.lp.c[cols]):
            return False
        sub = A[rows][:, cols]
        return bool(np.all(self.lp.senses[rows] == "<") and np.all(self.lp.b[rows] >= 1.0)
                    and np.all(sub.data == 1.0))

    def solve_node(self, fixed: dict) -> Optional[LPSolution]:
        """Relaxation of the node, block by block; None if infeasible."""
        lb, ub = self.bounds(fixed)
        if np.any(lb > ub):
            return None
        v = np.zeros(self.n)
        obj = 0.0
        attractor = {}
        for blk in self.blocks:
            if blk.kind == "reach":
                won = self.winning(ub, blk.family)
                if won is None:
                    return None
                keep, attractor = won
                ub = ub.copy()
                ub[self.pair_cols[np.setdiff1d(blk.cols, keep)].ravel()] = 0.0
        for blk in self.blocks:
            c = blk.cols
            if blk.kind == "packing":
                # propagation keeps at most one fixed selector per group; free ones relax to 0
                v[c] = lb[c]
            elif blk.kind == "reach":
                pass
            elif blk.kind == "free":
                cc = self.lp.c[c]
                pick = np.where(cc > 0, ub[c], lb[c])
                if not np.all(np.isfinite(pick)):
                    raise RuntimeError("node relaxation is unbounded; objective variables need finite bounds")
                v[c] = pick
                obj += float(cc @ pick)
            else:
                p = LPProblem(blk.lp.c, blk.lp.A, blk.lp.senses, blk.lp.b, lb[c], ub[c])
                sol = self.solve(p, blk.method)
                if sol is None:
                    return None
                v[c] = sol.x
                obj += sol.objective
        sol = LPSolution(LP_OPTIMAL, v, obj)
        sol.attractor = attractor
        return sol

    def solve(self, p: LPProblem, method: str):
        """Optimal LP solution, or None when infeasible.

        Never prunes on a numerical failure: other methods are tried in turn,
        and an infeasibility verdict from HiGHS is confirmed by the in-house
        simplex when the block is small enough.
        """
        self.lp_solves += 1
        m, n = p.shape
        simplex_ok = m * (n + 2 * m) <= 50 * AUTO_SIMPLEX_ENTRIES
        chain = [method] + [x for x in ("highs", "simplex") if x != method]
        if not simplex_ok:
            chain = [x for x in chain if x != "simplex"]
        chain.append("highs-tight")
        statuses = []
        highs_infeasible = 0
        for meth in chain:
            sol = solve_lp(p, method=meth)
            if sol.status == "infeasible" and meth != "simplex" and simplex_ok:
                check = solve_lp(p, method="simplex")
                if check.status in ("optimal", "infeasible"):
                    return check if check.optimal else None
                statuses.append(f"{meth}: infeasible, simplex: {check.status}")
                highs_infeasible += 1
                continue
            if sol.status in ("optimal", "infeasible"):
                return sol if sol.optimal else None
            if sol.status == "unbounded":
                raise RuntimeError("node relaxation is unbounded; objective variables need finite bounds")
            statuses.append(f"{meth}: {sol.status}")
            log.debug("LP %s returned %s; trying the next method", meth, sol.status)
        if highs_infeasible == 2:
            # both HiGHS tolerances agree and the simplex never contradicted them
            log.warning("accepting an infeasibility verdict the simplex could not confirm (%s)", ", ".join(statuses))
            return None
        raise NumericalError("no LP method produced a reliable answer (" + ", ".join(statuses) + ")")

    def _flow_graph(self):
        """Transition structure of every flow family, read back from the matrix columns."""
        if self.flows is None:
            return None
        model = self.model
        _, _, fams, Acsc = self.flows
        goal = model.goal_row
        graph = {}
        for fam, (rows, state_of_row, idx) in fams.items():
            arcs = []
            for (s, a), j in idx.items():
                lo, hi = Acsc.indptr[j], Acsc.indptr[j + 1]
                succ, own, out, to_goal = [], 0.0, 0.0, 0.0
                for i, v in zip(Acsc.indices[lo:hi], Acsc.data[lo:hi]):
                    t = state_of_row.get(int(i))
                    if t == s:
                        own = v
                    elif t is not None and v < 0:
                        succ.append(t)
                        out -= v
                    elif i == goal:
                        to_goal = v
                if own < 1.0 - 1e-15:
                    succ.append(s)
                # mass leaving the modelled states other than through the goal
                leak = own - out - to_goal
                arcs.append((j, s, tuple(succ), to_goal > 0, leak > 1e-12))
            graph[fam] = (set(rows), arcs, any(g for *_, g, _ in arcs))
        return graph, goal

    def winning(self, ub: np.ndarray, family: str):
        """Pairs usable by a policy reaching the goal almost surely from the
        initial state with allowed pairs only, plus an attractor choice per
        winning state; None if the initial state is losing.

        Emptiness is exactly infeasibility of the expected-visit block, and
        zeroing the other pairs keeps every feasible deterministic policy.
        The attractor picks, at each winning state, the pair that made it
        winning; following it reaches the goal almost surely.
        """
        states, arcs, _ = self._graph[0][family]
        allowed = [(j, s, succ, g) for j, s, succ, g, leak in arcs if ub[j] > 0 and not leak]
        W = set(states)
        while True:
            safe = [(j, s, succ, g) for j, s, succ, g in allowed if s in W and all(t in W for t in succ)]
            attractor = {}
            grew = True
            while grew:
                grew = False
                for j, s, succ, g in safe:
                    if s not in attractor and (g or any(t in attractor for t in succ)):
                        attractor[s] = j
                        grew = True
            if len(attractor) == len(W):
                break
            W = set(attractor)
        if self.model.initial not in W:
            return None
        return [j for j, *_ in safe], attractor

    # -- candidate assembly ------------------------------------------------------

    def implied(self, v: np.ndarray, fixed: dict):
        """Selector values implied by the continuous support; fractional unlinked binaries listed."""
        out = v.copy()
        fractional = []
        tol = self.opts.support_tol
        for j in self.binaries:
            if fixed.get(j) is not None:
                out[j] = fixed[j]
            elif self.linked[j]:
                out[j] = 1.0 if any(v[k] > tol for k in self.linked[j]) else 0.0
            elif abs(v[j] - round(v[j])) <= self.opts.int_tol:
                out[j] = round(v[j])
            else:
                fractional.append(j)
        return out, fractional

    def conflicts(self, cand: np.ndarray, fixed: dict):
        """Free selectors set in a packing group that has more than one selector set."""
        out = []
        for members in self.groups:
            ones = [j for j in members if cand[j] > 0.5]
            if len(ones) > 1:
                out.extend(j for j in ones if fixed.get(j) is None)
        return out

    def violated_rows(self, v: np.ndarray):
        act = self.A @ v
        scale = self.absA @ np.abs(v) + np.abs(self.lp.b)
        tol = 1e-9 * (1.0 + scale)
        s, b = self.lp.senses, self.lp.b
        bad = ((s == "<") & (act > b + tol)) | ((s == ">") & (act < b - tol)) | ((s == "=") & (np.abs(act - b) > tol))
        return np.flatnonzero(bad)

    def share(self, v: np.ndarray, j: int) -> float:
        """Fraction of its group's occupancy carried by selector ``j``, averaged over families."""
        gid = self.group_of.get(j)
        if gid is None or not self.linked[j]:
            return float(min(1.0, max(0.0, v[j])))
        members = self.groups[gid]
        shares = []
        fams = {}
        for k in self.linked[j]:
            fams.setdefault(self.link_family[k], 0.0)
            fams[self.link_family[k]] += max(v[k], 0.0)
        for fam, mine in fams.items():
            total = sum(max(v[k], 0.0) for m in members for k in self.linked[m] if self.link_family[k] == fam)
            if total > SHARE_FLOOR:
                shares.append(min(1.0, mine / total))
        return float(np.mean(shares)) if shares else 0.0

    def pick(self, v: np.ndarray, pool):
        if self.opts.branching == "first-violated":
            j = pool[0]
            return j, self.share(v, j)
        best, best_score, best_share = pool[0], -1.0, self.share(v, pool[0])
        for j in pool:
            sh = self.share(v, j)
            score = min(sh, 1.0 - sh)
            if score > best_score + 1e-12:
                best, best_score, best_share = j, score, sh
        return best, best_share

    # -- turning selectors into feasible points ----------------------------------

    def policy_point(self, on) -> Optional[np.ndarray]:
        """The exact point of the deterministic policy given by the selectors in ``on``.

        Each flow family is solved as a square linear system over the states
        the policy reaches from the initial state; everything else is zero.
        Returns None if the selectors do not define a feasible policy.
        """
        if self.flows is None:
            return self._lp_point(on)
        selector_state, pair_of, fams, Acsc = self.flows
        chosen = {}
        for j in on:
            s = selector_state[j]
            if s in chosen:
                return None
            chosen[s] = pair_of[j]
        v = np.zeros(self.n)
        reached = set()
        for fam, (rows, state_of_row, idx) in fams.items():
            start = self.model.initial
            if start not in rows:
                return None
            order = [start]
            seen = {start}
            k = 0
            while k < len(order):
                s = order[k]
                k += 1
                if s not in chosen:
                    return None
                j = idx[chosen[s]]
                for i in Acsc.indices[Acsc.indptr[j]:Acsc.indptr[j + 1]]:
                    t = state_of_row.get(int(i))
                    if t is not None and t not in seen:
                        seen.add(t)
                        order.append(t)
            r = [rows[s] for s in order]
            c = [idx[chosen[s]] for s in order]
            M = self.A[r][:, c].tocsc()
            sol = _refined_solve(M, self.lp.b[r])
            if sol is None:
                return None
            scale = 1e-9 * (1.0 + float(np.max(np.abs(sol))))
            if np.any(sol < -scale):
                return None
            v[c] = np.maximum(sol, 0.0)
            reached.update(order)
        for s in reached:
            v[self.model.families["d"][chosen[s]]] = 1.0
        if np.any(v > self.lp.ub + 1e-9 * (1.0 + np.abs(self.lp.ub))) or len(self.violated_rows(v)):
            return None
        return v

    def complete(self, on, attractor: dict) -> set:
        """Add attractor choices at reached states the selectors leave open.

        Relaxed occupancies of states reached only with tiny probability can
        fall below the support tolerance, leaving the candidate without an
        action there.
        """
        if self._graph is None or not attractor:
            return set(on)
        graph, _ = self._graph
        fam = next(f for f, (_, _, has_goal) in graph.items() if has_goal)
        selector_state, pair_of, _, _ = self.flows
        idx = self.model.families[fam]
        d = self.model.families["d"]
        succ_of = {j: succ for j, s, succ, g, leak in graph[fam][1]}
        chosen = {selector_state[j]: j for j in on}
        start = self.model.initial
        order, seen = [start], {start}
        k = 0
        while k < len(order):
            s = order[k]
            k += 1
            if s not in chosen:
                if s not in attractor:
                    continue
                pair = next(p for p, j in idx.items() if j == attractor[s])
                chosen[s] = d[pair]
            for t in succ_of[idx[pair_of[chosen[s]]]]:
                if t not in seen:
                    seen.add(t)
                    order.append(t)
        return set(chosen.values())

    def stuck_selectors(self, on) -> list:
        """Selectors in ``on`` at reached states from which the goal is unreachable.

        When the relaxation's support is a policy that never reaches the goal
        from some reached state, any feasible policy must change an action
        there, so branching on these selectors cuts the offending cycle.
        """
        if self._graph is None:
            return []
        graph, _ = self._graph
        fam = next((f for f, (_, _, has_goal) in graph.items() if has_goal), None)
        if fam is None:
            return []
        selector_state, pair_of, _, _ = self.flows
        idx = self.model.families[fam]
        arc_of = {j: (succ, g) for j, s, succ, g, leak in graph[fam][1]}
        chosen = {selector_state[j]: j for j in on}
        start = self.model.initial
        order, seen = [start], {start}
        k = 0
        while k < len(order):
            s = order[k]
            k += 1
            if s not in chosen:
                continue
            for t in arc_of[idx[pair_of[chosen[s]]]][0]:
                if t not in seen:
                    seen.add(t)
                    order.append(t)
        good = set()
        grew = True
        while grew:
            grew = False
            for s in order:
                if s in good or s not in chosen:
                    continue
                succ, g = arc_of[idx[pair_of[chosen[s]]]]
                if g or any(t in good for t in succ):
                    good.add(s)
                    grew = True
        return sorted(chosen[s] for s in order if s in chosen and s not in good)

    def _lp_point(self, on) -> Optional[np.ndarray]:
        """Fallback for models without flow metadata: one LP with every selector fixed."""
        on = set(on)
        fix = self.propagate({j: 1 if j in on else 0 for j in self.binaries})
        if fix is None:
            return None
        sol = self.solve_node(fix)
        if sol is None:
            return None
        v = sol.x.copy()
        for j in self.binaries:
            v[j] = fix[j]
        return None if len(self.violated_rows(v)) else v

    def round_policy(self, v: np.ndarray, fixed: dict) -> Optional[set]:
        """One selector per packing group: the one with the largest y, then x, share."""
        fams = sorted({f for f in self.link_family.values()}, key=lambda f: (f != "y", f != "x", f))
        fix = dict(fixed)
        for members in self.groups:
            if any(fix.get(j) == 1 for j in members):
                continue
            open_ = [j for j in members if fix.get(j) is None]
            if not open_:
                continue

            def key(j):
                return tuple(sum(v[k] for k in self.linked[j] if self.link_family[k] == fam) for fam in fams)
            best = max(open_, key=lambda j: (key(j), -j))
            for j in open_:
                fix[j] = 1 if j == best else 0
        fix = self.propagate(fix)
        return None if fix is None else {j for j, val in fix.items() if val == 1}


def solve_milp(model: MILPModel, opts: BnBOptions = BnBOptions()) -> MILPSolution:
    """Maximize ``model``; returns the best incumbent with a proven bound."""
    t0 = time.monotonic()
    S = _Search(model, opts)
    c = S.lp.c
    counter = itertools.count()
    incumbent = None
    inc_obj = -math.inf
    history = []

    fathomed = -math.inf  # best bound among subtrees closed by the gap tolerance

    def close_enough(bound):
        nonlocal fathomed
        if incumbent is None:
            return False
        if bound <= inc_obj + max(opts.abs_gap, opts.gap * max(1.0, abs(inc_obj))):
            fathomed = max(fathomed, bound)
            return True
        return False

    def offer(on):
        nonlocal incumbent, inc_obj
        v = S.policy_point(on)
        if v is None:
            return
        obj = float(c @ v)
        if obj > inc_obj + 1e-12 * max(1.0, abs(obj)):
            incumbent, inc_obj = v, obj
            history.append(obj)
            log.debug("incumbent %.12g", obj)

    def done(nodes, status, bound):
        if incumbent is None:
            return MILPSolution(status if status == LIMIT else INFEASIBLE, None, -math.inf,
                                bound if status == LIMIT else -math.inf, nodes, S.lp_solves, time.monotonic() - t0)
        sol = MILPSolution(status or OPTIMAL, incumbent, inc_obj, max(bound, inc_obj, fathomed), nodes, S.lp_solves,
                           time.monotonic() - t0)
        sol.history = history
        sol.root_bound = root_bound
        return sol

    root_bound = -math.inf
    root_fixed = S.propagate({j: 0 for j in S.binaries if S.lp.ub[j] < 0.5})
    if root_fixed is None:
        return done(0, None, -math.inf)
    root = S.solve_node(root_fixed)
    if root is None:
        return done(1, None, -math.inf)
    root_bound = root.objective
    heap = []
    nodes = 0
    status = None
    pending = (root_fixed, root, 0)
    while True:
        if pending is None:
            while heap and close_enough(heap[0].bound):
                heapq.heappop(heap)
            if not heap:
                break
            node = heapq.heappop(heap)
            sol = S.solve_node(node.fixed)
            if sol is None:
                continue
            pending = (node.fixed, sol, node.depth)
        fixed, sol, depth = pending
        pending = None
        nodes += 1
        if ((opts.node_limit is not None and nodes > opts.node_limit)
                or time.monotonic() - t0 > opts.time_limit):
            status = LIMIT
            heapq.heappush(heap, _Node((-sol.objective, next(counter)), fixed, sol.objective, depth))
            break
        if close_enough(sol.objective):
            continue
        cand, fractional = S.implied(sol.x, fixed)
        clash = S.conflicts(cand, fixed)
        if not fractional and not clash:
            # the relaxation points at one policy: evaluate it exactly
            on = S.complete({j for j in S.binaries if cand[j] > 0.5}, getattr(sol, "attractor", {}))
            offer(on)
            if close_enough(sol.objective):
                continue
            pool = [j for j in S.stuck_selectors(on) if fixed.get(j) is None]
            if not pool:
                pool = sorted(j for j in on if fixed.get(j) is None)
            if not pool:
                pool = [j for j in S.binaries if fixed.get(j) is None][:1]
            if not pool:
                log.debug("dropping fully fixed node: relaxation %.12g, policy infeasible", sol.objective)
                continue
        else:
            if opts.heuristic and (nodes == 1 or nodes % opts.heuristic_every == 0):
                on = S.round_policy(sol.x, fixed)
                if on is not None:
                    offer(S.complete(on, getattr(sol, "attractor", {})))
                    if close_enough(sol.objective):
                        continue
            pool = sorted(set(fractional) | set(clash))
        j, sh = S.pick(sol.x, pool)
        children = []
        for val in ((1, 0) if sh >= 0.5 else (0, 1)):
            f = dict(fixed)
            f[j] = val
            f = S.propagate(f)
            if f is not None:
                children.append(f)
        # plunge into the preferred child, queue the other
        for k, f in enumerate(children):
            if k == 0:
                child = S.solve_node(f)
                if child is not None and not close_enough(child.objective):
                    pending = (f, child, depth + 1)
            else:
                heapq.heappush(heap, _Node((-sol.objective, next(counter)), f, sol.objective, depth + 1))

    open_bound = max((n.bound for n in heap), default=-math.inf)
    return done(nodes, status, open_bound if status == LIMIT else inc_obj)


def probe_bigm(model: MILPModel, family: str = "x", ratio_cap: float = 1e6,
               opts: BnBOptions = BnBOptions()) -> float:
    """Largest total ``family`` mass over deterministic policies: a big-M for each of its variables.

    Plain maximization of the mass is unbounded because of circulations on
    unreached classes, so each state's mass is tied to its discounted
    occupancy by ``sum_a x <= ratio_cap * sum_a y``.  Reached states satisfy
    this for a large enough cap; the probe refuses to answer if the cap binds.
    """
    probe = model.copy()
    fam = model.families[family]
    yfam = model.families["y"]
    probe.objective = {j: 1.0 for j in fam.values()}
    for s in model.states:
        coefs = {}
        for (t, a), j in fam.items():
            if t == s:
                coefs[j] = 1.0
                coefs[yfam[(t, a)]] = -ratio_cap
        probe.add_row(f"probe_cap[{s}]", coefs, "<", 0.0)
    sol = solve_milp(probe, opts)
    if sol.status != OPTIMAL:
        raise RuntimeError(f"big-M probe for {family!r} ended with status {sol.status}")
    for s in model.states:
        xs = sum(sol.values[j] for (t, a), j in fam.items() if t == s)
        ys = sum(sol.values[yfam[(t, a)]] for (t, a) in fam if t == s)
        if xs > 1e-9 and xs >= 0.999 * ratio_cap * ys:
            raise RuntimeError("big-M probe is inconclusive: the ratio cap binds; raise ratio_cap")
    return max(sol.objective, opts.int_tol)

"""Linear programs: a bounded-variable revised simplex and a HiGHS backend.

Problems are stated as ``maximize c @ v`` subject to sparse rows
``A @ v (<=, ==, >=) b`` and ``lb <= v <= ub``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import linprog

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL = "numerical"
ITERATION_LIMIT = "iteration_limit"

HIGHS_TOL = 1e-10


@dataclass
class LPProblem:
    c: np.ndarray
    A: sp.csr_matrix
    senses: np.ndarray  # '<', '=', '>'
    b: np.ndarray
    lb: np.ndarray
    ub: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = len(self.c)
        self.A = sp.csr_matrix(self.A, shape=(len(self.b), n)) if self.A is not None else sp.csr_matrix((0, n))
        self.senses = np.asarray(self.senses, dtype="<U1")
        self.b = np.asarray(self.b, dtype=float)
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        if self.A.shape != (len(self.b), n) or len(self.senses) != len(self.b):
            raise ValueError("inconsistent LP dimensions")
        if len(self.lb) != n or len(self.ub) != n:
            raise ValueError("bounds must match the number of variables")
        if not set(self.senses.tolist()) <= {"<", "=", ">"}:
            raise ValueError("constraint senses must be '<', '=' or '>'")

    @property
    def shape(self):
        return self.A.shape

    def residuals(self, v: np.ndarray) -> float:
        """Largest violation of rows and bounds at ``v``."""
        act = self.A @ v
        viol = 0.0
        if len(act):
            le = self.senses == "<"
            ge = self.senses == ">"
            eq = self.senses == "="
            viol = max(
                np.max(np.where(le, act - self.b, 0.0), initial=0.0),
                np.max(np.where(ge, self.b - act, 0.0), initial=0.0),
                np.max(np.where(eq, np.abs(act - self.b), 0.0), initial=0.0),
            )
        viol = max(viol, np.max(self.lb - v, initial=0.0), np.max(v - self.ub, initial=0.0))
        return float(viol)


@dataclass
class LPSolution:
    status: str
    x: Optional[np.ndarray] = None
    objective: float = float("nan")
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def solve_lp(p: LPProblem, method: str = "simplex", tol: float = 1e-9, bland: bool = False,
             max_iter: Optional[int] = None) -> LPSolution:
    """``method`` is "simplex" (in-house), "highs" (default tolerances) or "highs-tight"."""
    if np.any(p.lb > p.ub + tol):
        return LPSolution(INFEASIBLE)
    if method == "highs":
        return _solve_highs(p, None)
    if method == "highs-tight":
        return _solve_highs(p, HIGHS_TOL)
    if method != "simplex":
        raise ValueError(f"unknown LP method {method!r}")
    return RevisedSimplex(p, tol=tol, bland=bland, max_iter=max_iter).solve()


def _solve_highs(p: LPProblem, tol: Optional[float]) -> LPSolution:
    le = p.senses == "<"
    ge = p.senses == ">"
    eq = p.senses == "="
    A_ub = sp.vstack([p.A[le], -p.A[ge]]).tocsr() if (le.any() or ge.any()) else None
    b_ub = np.concatenate([p.b[le], -p.b[ge]]) if A_ub is not None else None
    A_eq = p.A[eq] if eq.any() else None
    b_eq = p.b[eq] if eq.any() else None
    bounds = np.column_stack([np.where(np.isfinite(p.lb), p.lb, -np.inf), np.where(np.isfinite(p.ub), p.ub, np.inf)])
    res = linprog(-p.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": tol, "dual_feasibility_tolerance": tol} if tol else None)
    if res.status == 0:
        return LPSolution(OPTIMAL, res.x, float(p.c @ res.x), int(getattr(res, "nit", 0)))
    if res.status == 2:
        return LPSolution(INFEASIBLE)
    if res.status == 3:
        return LPSolution(UNBOUNDED)
    if res.status == 1:
        return LPSolution(ITERATION_LIMIT)
    return LPSolution(NUMERICAL)


class RevisedSimplex:
    """Two-phase primal revised simplex with explicit bounds.

    The basis inverse is kept densely and updated by eta (rank-one) steps;
    it is recomputed from scratch every ``refactor`` pivots.  Dantzig pricing
    is used until progress stalls, then Bland's rule takes over until the
    objective moves again, which rules out cycling.
    """

    def __init__(self, p: LPProblem, tol: float = 1e-9, bland: bool = False, max_iter: Optional[int] = None,
                 refactor: int = 64, stall_limit: int = 50):
        self.p = p
        self.tol = tol
        self.always_bland = bland
        self.refactor = refactor
        self.stall_limit = stall_limit
        self._standardize()
        m, n = self.A.shape
        self.max_iter = max_iter or 50 * (m + n) + 1000
        self.iterations = 0

    def _standardize(self):
        p = self.p
        m, n = p.A.shape
        A = p.A.toarray()
        cols = [A]
        lb = list(p.lb)
        ub = list(p.ub)
        cost = list(-p.c)
        # free columns become differences of two nonnegative columns
        self.neg_part = {}
        for j in range(n):
            if not np.isfinite(p.lb[j]):
                if np.isfinite(p.ub[j]):
                    raise ValueError("variables with lb=-inf and finite ub are not supported")
                self.neg_part[j] = len(lb)
                cols.append(-A[:, [j]])
                lb[j] = 0.0
                lb.append(0.0)
                ub.append(np.inf)
                cost.append(p.c[j])
        n_struct = len(lb)
        slack_cols = []
        for i, s in enumerate(p.senses):
            if s == "=":
                continue
            col = np.zeros((m, 1))
            col[i, 0] = 1.0 if s == "<" else -1.0
            slack_cols.append(col)
            lb.append(0.0)
            ub.append(np.inf)
            cost.append(0.0)
        self.A = np.hstack(cols + slack_cols) if (len(cols) > 1 or slack_cols) else A
        self.lb = np.array(lb, dtype=float)
        self.ub = np.array(ub, dtype=float)
        self.cost2 = np.array(cost, dtype=float)
        self.b = p.b.copy()
        self.n_orig = n
        self.n_struct = n_struct

    # -- core -----------------------------------------------------------------

    def _refactor(self):
        B = self.Afull[:, self.basis]
        # a singular basis is reported through the return value, not a warning
        with warnings.catch_warnings(), np.errstate(all="ignore"):
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            try:
                lu = sla.lu_factor(B, check_finite=False)
                self.B_inv = sla.lu_solve(lu, np.eye(len(self.basis)), check_finite=False)
            except (sla.LinAlgError, ValueError):
                return False
        if not np.all(np.isfinite(self.B_inv)):
            return False
        nonbasic = ~self.in_basis
        rhs = self.b - self.Afull[:, nonbasic] @ self.x[nonbasic]
        self.x[self.basis] = self.B_inv @ rhs
        return True

    def _iterate(self, cost) -> str:
        tol = self.tol
        since_refactor = 0
        best_obj = np.inf
        stall = 0
        use_bland = self.always_bland
        basis_arr = np.array(self.basis)
        while True:
            if self.iterations >= self.max_iter:
                return ITERATION_LIMIT
            if since_refactor >= self.refactor:
                if not self._refactor():
                    return NUMERICAL
                since_refactor = 0
            basis_arr = np.asarray(self.basis)
            pi = cost[basis_arr] @ self.B_inv
            d = cost - pi @ self.Afull
            movable = (self.ub - self.lb) > tol
            can_up = ~self.in_basis & ~self.at_upper & (d < -tol) & movable
            can_down = ~self.in_basis & self.at_upper & (d > tol)
            cand = np.flatnonzero(can_up | can_down)
            if len(cand) == 0:
                return OPTIMAL
            obj = float(cost @ self.x)
            if obj < best_obj - 1e-12 * max(1.0, abs(best_obj) if np.isfinite(best_obj) else 1.0):
                best_obj = obj
                stall = 0
                use_bland = self.always_bland
            else:
                stall += 1
                if stall > self.stall_limit:
                    use_bland = True
            j = int(cand[0]) if use_bland else int(cand[np.argmax(np.abs(d[cand]))])
            direction = -1.0 if self.at_upper[j] else 1.0
            alpha = self.B_inv @ self.Afull[:, j]
            delta = direction * alpha
            xb = self.x[basis_arr]
            lbb = self.lb[basis_arr]
            ubb = self.ub[basis_arr]
            t_best = self.ub[j] - self.lb[j]
            leave = -1
            leave_upper = False
            dec = delta > tol
            inc = delta < -tol
            ratios = np.full(len(delta), np.inf)
            ratios[dec] = np.maximum(xb[dec] - lbb[dec], 0.0) / delta[dec]
            upper_finite = inc & np.isfinite(ubb)
            ratios[upper_finite] = np.maximum(ubb[upper_finite] - xb[upper_finite], 0.0) / -delta[upper_finite]
            if len(ratios):
                t_min = ratios.min()
                if t_min <= t_best:
                    ties = np.flatnonzero(ratios <= t_min + tol)
                    if use_bland:
                        r = int(ties[np.argmin(basis_arr[ties])])
                    else:
                        r = int(ties[np.argmax(np.abs(delta[ties]))])
                    t_best = ratios[r]
                    leave = r
                    leave_upper = bool(inc[r])
            if not np.isfinite(t_best):
                return UNBOUNDED
            self.iterations += 1
            self.x[j] += direction * t_best
            self.x[basis_arr] = xb - t_best * delta
            if leave < 0:
                self.at_upper[j] = not self.at_upper[j]
                continue
            k = self.basis[leave]
            self.x[k] = self.ub[k] if leave_upper else self.lb[k]
            self.at_upper[k] = leave_upper
            self.in_basis[k] = False
            self.in_basis[j] = True
            self.at_upper[j] = False
            self.basis[leave] = j
            piv = alpha[leave]
            row = self.B_inv[leave] / piv
            self.B_inv -= np.outer(alpha, row)
            self.B_inv[leave] = row
            since_refactor += 1

    def solve(self) -> LPSolution:
        m, n = self.A.shape
        x = np.where(np.isfinite(self.lb), self.lb, 0.0)
        resid = self.b - self.A @ x
        sign = np.where(resid >= 0, 1.0, -1.0)
        self.Afull = np.hstack([self.A, np.diag(sign)]) if m else self.A
        self.x = np.concatenate([x, np.abs(resid)])
        self.lb = np.concatenate([self.lb, np.zeros(m)])
        self.ub = np.concatenate([self.ub, np.full(m, np.inf)])
        self.basis = list(range(n, n + m))
        self.in_basis = np.zeros(n + m, dtype=bool)
        self.in_basis[n:] = True
        self.at_upper = np.zeros(n + m, dtype=bool)
        self.B_inv = np.diag(sign)

        if m:
            cost1 = np.concatenate([np.zeros(n), np.ones(m)])
            status = self._iterate(cost1)
            if status != OPTIMAL:
                return LPSolution(status if status != UNBOUNDED else NUMERICAL, iterations=self.iterations)
            self._refactor()
            infeas = float(np.sum(self.x[n:]))
            if infeas > 1e-7 * max(1.0, float(np.max(np.abs(self.b), initial=0.0))):
                return LPSolution(INFEASIBLE, iterations=self.iterations)
            self.ub[n:] = 0.0
        cost2 = np.concatenate([self.cost2, np.zeros(m)])
        status = self._iterate(cost2)
        if status != OPTIMAL:
            return LPSolution(status, iterations=self.iterations)
        if m and not self._refactor():
            return LPSolution(NUMERICAL, iterations=self.iterations)
        v = self.x[: self.n_orig].copy()
        for j, k in self.neg_part.items():
            v[j] -= self.x[k]
        v = np.clip(v, self.p.lb, self.p.ub)
        viol = self.p.residuals(v)
        scale = max(1.0, float(np.max(np.abs(self.p.b), initial=0.0)))
        if viol > 1e-7 * scale:
            log.debug("simplex solution violates constraints by %g", viol)
            return LPSolution(NUMERICAL, iterations=self.iterations)
        return LPSolution(OPTIMAL, v, float(self.p.c @ v), self.iterations)

"""Bounded-variable primal simplex for small dense LPs.

Solves ``min c @ x`` subject to row constraints ``A x (<=, >=, =) b`` and
``lb <= x <= ub``. Every row gets a slack column whose bounds encode its
sense; rows whose slack cannot absorb the starting residual get an
artificial column and phase 1 drives those to zero. Pricing is Dantzig's
rule; after a run of degenerate pivots it switches to Bland's rule, which
guarantees termination. All ties break on the lowest column index, so
results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"


@dataclass
class LPResult:
    status: str
    x: np.ndarray | None
    objective: float
    iterations: int


def _dense(A) -> np.ndarray:
    if sp.issparse(A):
        return A.toarray()
    return np.asarray(A, dtype=float)


def _start_values(lo, hi):
    return np.where(np.isfinite(lo), lo, np.where(np.isfinite(hi), hi, 0.0))


class _Tableau:
    """Revised-simplex state with an explicit basis inverse."""

    REFACTOR = 64
    BLAND_AFTER = 40

    def __init__(self, M, b, lo, hi, x, basis, tol):
        self.M, self.b, self.lo, self.hi = M, b, lo, hi
        self.x = x
        self.basis = list(basis)
        self.is_basic = np.zeros(M.shape[1], dtype=bool)
        self.is_basic[self.basis] = True
        self.tol = tol
        self.iterations = 0
        self._refactor()

    def _refactor(self):
        self.Binv = np.linalg.inv(self.M[:, self.basis])
        self._recompute_basic()

    def _recompute_basic(self):
        xn = np.where(self.is_basic, 0.0, self.x)
        self.x[self.basis] = self.Binv @ (self.b - self.M @ xn)

    def run(self, cost, max_iter) -> str:
        tol = self.tol
        dtol = tol * max(1.0, float(np.max(np.abs(cost))) if cost.size else 1.0)
        degenerate = 0
        since_refactor = 0
        while True:
            if self.iterations >= max_iter:
                return ITERATION_LIMIT
            if since_refactor >= self.REFACTOR:
                self._refactor()
                since_refactor = 0
            y = cost[self.basis] @ self.Binv
            d = cost - y @ self.M
            nb = ~self.is_basic
            can_inc = nb & (self.x < self.hi - tol) & (d < -dtol)
            can_dec = nb & (self.x > self.lo + tol) & (d > dtol)
            cand = can_inc | can_dec
            if not cand.any():
                return OPTIMAL
            if degenerate >= self.BLAND_AFTER:
                q = int(np.argmax(cand))
            else:
                q = int(np.argmax(np.where(cand, np.abs(d), -1.0)))
            direction = 1.0 if can_inc[q] else -1.0
            w = self.Binv @ self.M[:, q]
            delta = -direction * w              # change of basic values per unit step
            theta = self.hi[q] - self.lo[q]
            leave = -1
            xb = self.x[self.basis]
            lob = self.lo[self.basis]
            hib = self.hi[self.basis]
            ptol = 1e-10
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.full(len(self.basis), np.inf)
                dec = delta < -ptol
                inc = delta > ptol
                ratio[dec] = (xb[dec] - lob[dec]) / -delta[dec]
                ratio[inc] = (hib[inc] - xb[inc]) / delta[inc]
            ratio = np.maximum(ratio, 0.0)
            if ratio.size:
                rmin = float(ratio.min())
                if rmin < theta:
                    ties = np.nonzero(ratio <= rmin + 1e-12)[0]
                    if degenerate >= self.BLAND_AFTER:
                        leave = int(min(ties, key=lambda i: self.basis[i]))
                    else:
                        mag = np.abs(delta[ties])
                        best = ties[mag >= mag.max() - 1e-12]
                        leave = int(min(best, key=lambda i: self.basis[i]))
                    theta = rmin
            if not np.isfinite(theta):
                return UNBOUNDED
            self.iterations += 1
            degenerate = degenerate + 1 if theta <= 1e-12 else 0
            self.x[q] += direction * theta
            self.x[self.basis] += delta * theta
            if leave < 0:
                continue
            p = self.basis[leave]
            self.x[p] = self.lo[p] if delta[leave] < 0 else self.hi[p]
            self.basis[leave] = q
            self.is_basic[p] = False
            self.is_basic[q] = True
            pivot = w[leave]
            row = self.Binv[leave] / pivot
            self.Binv -= np.outer(w, row)
            self.Binv[leave] = row
            since_refactor += 1
            self._recompute_basic()


def _row_ok(ax: float, sense: str, rhs: float, tol: float) -> bool:
    return {"<": ax <= rhs + tol, ">": ax >= rhs - tol, "=": abs(ax - rhs) <= tol}[sense]


def solve_lp(c, A, sense, rhs, lb, ub, *, tol: float = 1e-9,
             max_iter: int = 200_000) -> LPResult:
    """Minimize ``c @ x``. ``sense`` holds ``'<'``, ``'>'`` or ``'='`` per row."""
    c = np.asarray(c, dtype=float)
    n = c.size
    if n == 0:
        feasible = all(_row_ok(0.0, sg, r, tol) for sg, r in zip(np.asarray(sense), np.asarray(rhs, float)))
        return LPResult(OPTIMAL if feasible else INFEASIBLE, np.zeros(0) if feasible else None,
                        0.0 if feasible else np.nan, 0)
    A = _dense(A).reshape(-1, n)
    m = A.shape[0]
    rhs = np.asarray(rhs, dtype=float)
    lb = np.asarray(lb, dtype=float)
    ub = np.asarray(ub, dtype=float)
    if np.any(lb > ub + tol):
        return LPResult(INFEASIBLE, None, np.nan, 0)
    sense = np.asarray(sense)
    s_lo = np.where(sense == ">", -np.inf, 0.0)
    s_hi = np.where(sense == "<", np.inf, 0.0)

    x_struct = _start_values(lb, ub)
    resid = rhs - A @ x_struct
    basis = []
    art_rows, art_sign = [], []
    x_slack = np.zeros(m)
    for i in range(m):
        if s_lo[i] - tol <= resid[i] <= s_hi[i] + tol:
            x_slack[i] = resid[i]
            basis.append(n + i)
        else:
            bound = s_lo[i] if resid[i] < s_lo[i] else s_hi[i]
            x_slack[i] = bound
            art_rows.append(i)
            art_sign.append(1.0 if resid[i] - bound > 0 else -1.0)
    k = len(art_rows)
    art = np.zeros((m, k))
    for a, (i, sgn) in enumerate(zip(art_rows, art_sign)):
        art[i, a] = sgn
        basis.append(n + m + a)
    # basis order must match rows: slack i or artificial for row i
    row_basis = np.empty(m, dtype=int)
    for col in basis:
        row = col - n if col < n + m else art_rows[col - n - m]
        row_basis[row] = col
    M = np.hstack([A, np.eye(m), art])
    lo = np.concatenate([lb, s_lo, np.zeros(k)])
    hi = np.concatenate([ub, s_hi, np.full(k, np.inf)])
    x = np.concatenate([x_struct, x_slack, np.zeros(k)])
    tab = _Tableau(M, rhs, lo, hi, x, row_basis, tol)

    if k:
        phase1 = np.concatenate([np.zeros(n + m), np.ones(k)])
        status = tab.run(phase1, max_iter)
        if status == ITERATION_LIMIT:
            return LPResult(status, None, np.nan, tab.iterations)
        infeas = float(tab.x[n + m:].sum())
        if infeas > 1e-7 * max(1.0, float(np.max(np.abs(rhs), initial=0.0))):
            return LPResult(INFEASIBLE, None, np.nan, tab.iterations)
        tab.hi[n + m:] = 0.0
        tab._recompute_basic()
    cost = np.concatenate([c, np.zeros(m + k)])
    status = tab.run(cost, max_iter)
    if status != OPTIMAL:
        return LPResult(status, None, np.nan, tab.iterations)
    xs = tab.x[:n].copy()
    # snap values sitting within tolerance of a bound
    with np.errstate(invalid="ignore"):
        near_lo = np.isfinite(lb) & (np.abs(xs - lb) <= 1e-11 * np.maximum(1, np.abs(lb)))
        near_hi = np.isfinite(ub) & (np.abs(xs - ub) <= 1e-11 * np.maximum(1, np.abs(ub)))
    xs[near_lo] = lb[near_lo]
    xs[near_hi] = ub[near_hi]
    return LPResult(OPTIMAL, xs, float(c @ xs), tab.iterations)

"""Best-bound branch and bound over LP relaxations.

Node selection is best bound (ties: lower node id); branching picks the
most fractional integer variable (ties: lowest index). Every LP is solved
from scratch, so a run is a pure function of the program and options.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import simplex
from .program import MathProgram

LPSolver = Callable[..., simplex.LPResult]


@dataclass(frozen=True)
class BBOptions:
    gap_tol: float = 1e-9          # relative
    abs_gap: float = 1e-9
    node_limit: int = 200_000
    time_limit: float = 600.0
    int_tol: float = 1e-6


@dataclass
class BBOutcome:
    status: str                    # optimal | gap_limit | node_limit | infeasible
    v: np.ndarray | None
    objective: float
    bound: float
    nodes: int

    @property
    def gap(self) -> float:
        if self.v is None or not math.isfinite(self.bound):
            return math.inf
        return max(0.0, self.bound - self.objective) / max(1.0, abs(self.objective))


def lp_relaxation(prog: MathProgram, lb=None, ub=None, solver: LPSolver = simplex.solve_lp):
    """Solve the relaxation as a maximization; returns (LPResult, max objective)."""
    lb = prog.lb if lb is None else lb
    ub = prog.ub if ub is None else ub
    res = solver(-prog.objective, prog.A, prog.sense, prog.rhs, lb, ub)
    if res.status != simplex.OPTIMAL:
        return res, -math.inf
    return res, float(prog.objective @ res.x) + prog.objective_constant


def branch_and_bound(prog: MathProgram, options: BBOptions = BBOptions(),
                     solver: LPSolver = simplex.solve_lp) -> BBOutcome:
    start = time.perf_counter()
    ints = np.nonzero(prog.integer)[0]
    incumbent_v = None
    incumbent = -math.inf
    nodes = 0
    counter = 0
    heap: list = []

    def close_enough(bound: float) -> bool:
        if incumbent_v is None:
            return False
        return bound - incumbent <= max(options.abs_gap, options.gap_tol * abs(incumbent))

    def visit(lb, ub):
        nonlocal nodes, counter, incumbent, incumbent_v
        nodes += 1
        res, val = lp_relaxation(prog, lb, ub, solver)
        if res.status == simplex.UNBOUNDED:
            raise ValueError("LP relaxation is unbounded")
        if res.status != simplex.OPTIMAL or close_enough(val):
            return
        xi = res.x[ints]
        frac = np.abs(xi - np.round(xi))
        if frac.max(initial=0.0) <= options.int_tol:
            fixed_lb, fixed_ub = lb.copy(), ub.copy()
            fixed_lb[ints] = fixed_ub[ints] = np.round(xi)
            res2, val2 = lp_relaxation(prog, fixed_lb, fixed_ub, solver)
            if res2.status == simplex.OPTIMAL and val2 > incumbent:
                incumbent, incumbent_v = val2, res2.x
            return
        counter += 1
        heapq.heappush(heap, (-val, counter, lb, ub, res.x))

    visit(prog.lb.astype(float).copy(), prog.ub.astype(float).copy())
    status = "optimal"
    while heap:
        neg_bound, _, lb, ub, x = heap[0]
        if close_enough(-neg_bound):
            heap.clear()
            break
        if nodes >= options.node_limit or time.perf_counter() - start > options.time_limit:
            status = "gap_limit" if incumbent_v is not None else "node_limit"
            break
        heapq.heappop(heap)
        xi = x[ints]
        dist = np.abs(xi - np.floor(xi) - 0.5)    # 0 = most fractional
        dist[np.abs(xi - np.round(xi)) <= options.int_tol] = np.inf
        k = ints[int(np.argmin(dist))]            # argmin picks lowest index on ties
        val = x[k]
        down_ub = ub.copy()
        down_ub[k] = math.floor(val)
        visit(lb, down_ub)
        up_lb = lb.copy()
        up_lb[k] = math.ceil(val)
        visit(up_lb, ub)

    bound = max([incumbent] + [-h[0] for h in heap])
    if incumbent_v is None and status == "optimal":
        return BBOutcome("infeasible", None, -math.inf, -math.inf, nodes)
    return BBOutcome(status, incumbent_v, incumbent, bound, nodes)


def deletion_filter(prog: MathProgram, rows: list[int] | None = None,
                    solver: LPSolver = simplex.solve_lp, max_rows: int = 3000) -> list[int]:
    """Rows of an irreducible infeasible subset of the LP relaxation (best effort).

    Returns an empty list if the relaxation is feasible (integer infeasibility
    is not diagnosed) or the program is too large to filter.
    """
    keep = list(range(prog.n_rows)) if rows is None else list(rows)
    if len(keep) > max_rows:
        return []

    def feasible(subset):
        A = prog.A[subset] if subset else prog.A[:0]
        res = solver(np.zeros(prog.n_vars), A, prog.sense[subset], prog.rhs[subset],
                     prog.lb, prog.ub)
        return res.status != simplex.INFEASIBLE

    if feasible(keep):
        return []
    i = 0
    while i < len(keep):
        trial = keep[:i] + keep[i + 1:]
        if not feasible(trial):
            keep = trial
        else:
            i += 1
    return keep

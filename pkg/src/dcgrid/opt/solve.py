"""Solve a scheduling instance and package the result.

Backends:

* ``bb``: the bundled simplex + branch and bound (exact, desk scale).
* ``highs``: scipy's HiGHS MILP interface, for larger studies.
* ``auto``: ``bb`` up to ``auto_bb_max_vars`` variables, ``highs`` above.

Relaxed mode solves the LP relaxation, rounds the allocation down, repairs
capacity and work, and marks the result as non-exact.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import econ
from ..model import SchedulePlan, SchedulingInstance, admissibility, validate_schedule
from . import simplex
from .bb import BBOptions, branch_and_bound, deletion_filter, lp_relaxation
from .fcfs import fcfs_baseline
from .program import TERMS, MathProgram, build_program
from .service import best_service, marginal_values

STATUSES = ("optimal", "gap_limit", "infeasible", "node_limit")
BACKENDS = ("auto", "bb", "highs")


class SolverError(RuntimeError):
    """The backend failed in a way that is not a status (unbounded, numerical)."""


@dataclass(frozen=True)
class SolveOptions:
    backend: str = "auto"
    gap_tol: float = 1e-9
    node_limit: int = 200_000
    time_limit: float = 600.0
    relax: bool = False
    auto_bb_max_vars: int = 400
    certificate: bool = True

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}")


@dataclass
class SolveResult:
    status: str
    plan: SchedulePlan | None
    objective: float
    objective_breakdown: dict[str, float]
    evaluated: dict[str, float]
    bound: float
    gap: float
    nodes: int
    wall_time: float
    backend: str
    portfolio: str
    exact: bool = True
    pwl_bound_apriori: float = 0.0
    pwl_gap: float = 0.0
    certificate: list[str] = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.plan is not None

    def to_dict(self, *, include_wall_time: bool = False) -> dict:
        def num(v):
            return v if math.isfinite(v) else None
        d = {
            "status": self.status, "portfolio": self.portfolio, "backend": self.backend,
            "exact": self.exact, "objective": num(self.objective),
            "objective_breakdown": self.objective_breakdown, "evaluated": self.evaluated,
            "bound": num(self.bound), "gap": num(self.gap), "nodes": self.nodes,
            "pwl_bound_apriori": self.pwl_bound_apriori, "pwl_gap": self.pwl_gap,
            "certificate": self.certificate,
        }
        if include_wall_time:
            d["wall_time"] = self.wall_time
        return d

    def to_json(self, path, *, include_wall_time: bool = False) -> None:
        Path(path).write_text(json.dumps(self.to_dict(include_wall_time=include_wall_time),
                                         indent=2, sort_keys=True) + "\n")


def _empty(status, backend, portfolio, nodes, start, certificate=()):
    return SolveResult(status, None, -math.inf, {}, {}, -math.inf, math.inf, nodes,
                       time.perf_counter() - start, backend, portfolio,
                       certificate=list(certificate))


def _package(prog: MathProgram, v: np.ndarray, instance: SchedulingInstance, *, status, bound,
             nodes, start, backend, exact=True) -> SolveResult:
    v = prog.polish(v)
    plan = prog.extract_plan(v)
    problems = validate_schedule(plan, instance)
    if problems:
        raise SolverError("solver returned an invalid plan: " + "; ".join(map(str, problems[:5])))
    objective = prog.value(v)
    evaluated = econ.evaluate(plan, instance).as_dict()
    gap = max(0.0, bound - objective) / max(1.0, abs(objective)) if math.isfinite(bound) else math.inf
    return SolveResult(
        status=status, plan=plan, objective=objective,
        objective_breakdown=prog.breakdown(v), evaluated=evaluated, bound=bound, gap=gap,
        nodes=nodes, wall_time=time.perf_counter() - start, backend=backend,
        portfolio=instance.portfolio.name, exact=exact,
        pwl_bound_apriori=prog.pwl_bound_apriori,
        pwl_gap=max(0.0, objective - evaluated["net"]))


def solve_bb(prog: MathProgram, instance: SchedulingInstance,
             options: SolveOptions = SolveOptions()) -> SolveResult:
    start = time.perf_counter()
    out = branch_and_bound(prog, BBOptions(gap_tol=options.gap_tol, node_limit=options.node_limit,
                                           time_limit=options.time_limit))
    name = instance.portfolio.name
    if out.v is None:
        cert = []
        if out.status == "infeasible" and options.certificate:
            cert = [prog.row_names[i] for i in deletion_filter(prog)]
        return _empty(out.status, "bb", name, out.nodes, start, cert)
    return _package(prog, out.v, instance, status=out.status, bound=out.bound,
                    nodes=out.nodes, start=start, backend="bb")


def _highs_constraints(prog: MathProgram):
    from scipy.optimize import LinearConstraint

    lo = np.where(prog.sense == "<", -np.inf, prog.rhs)
    hi = np.where(prog.sense == ">", np.inf, prog.rhs)
    return LinearConstraint(prog.A, lo, hi)


def solve_highs(prog: MathProgram, instance: SchedulingInstance,
                options: SolveOptions = SolveOptions()) -> SolveResult:
    from scipy.optimize import Bounds, milp

    start = time.perf_counter()
    name = instance.portfolio.name
    res = milp(-prog.objective, constraints=[_highs_constraints(prog)],
               integrality=prog.integer.astype(int), bounds=Bounds(prog.lb, prog.ub),
               options={"mip_rel_gap": options.gap_tol, "time_limit": options.time_limit,
                        "node_limit": options.node_limit, "disp": False})
    nodes = int(getattr(res, "mip_node_count", 0) or 0)
    if res.status == 2:
        cert = []
        if options.certificate:
            cert = [prog.row_names[i] for i in deletion_filter(prog)]
        return _empty("infeasible", "highs", name, nodes, start, cert)
    if res.x is None:
        if res.status == 1:
            return _empty("node_limit", "highs", name, nodes, start)
        raise SolverError(f"HiGHS: {res.message}")
    status = "optimal" if res.status == 0 else "gap_limit"
    dual = getattr(res, "mip_dual_bound", None)
    bound = -float(dual) + prog.objective_constant if dual is not None and math.isfinite(dual) else math.inf
    return _package(prog, res.x, instance, status=status, bound=bound, nodes=nodes,
                    start=start, backend="highs")


def solve_relaxed(prog: MathProgram, instance: SchedulingInstance,
                  options: SolveOptions = SolveOptions()) -> SolveResult:
    """LP relaxation, round down, repair; flagged non-exact."""
    from scipy.optimize import Bounds, milp

    start = time.perf_counter()
    name = instance.portfolio.name
    res = milp(-prog.objective, constraints=[_highs_constraints(prog)],
               bounds=Bounds(prog.lb, prog.ub), options={"disp": False})
    if res.x is None:
        r = _empty("infeasible", "relaxed", name, 0, start)
        r.exact = False
        return r
    bound = -float(res.fun) + prog.objective_constant
    xf = np.zeros(prog.shape)
    for key, i in prog.index.items():
        if key[0] == "x":
            xf[key[1:]] = res.x[i]
    plan = repair_allocation(xf, instance)
    if plan is None:
        r = _empty("infeasible", "relaxed", name, 0, start)
        r.exact = False
        return r
    v = vector_from_plan(prog, plan)
    out = _package(prog, v, instance, status="gap_limit", bound=bound, nodes=0,
                   start=start, backend="relaxed", exact=False)
    return out


def vector_from_plan(prog: MathProgram, plan: SchedulePlan) -> np.ndarray:
    """Program vector holding ``plan``'s x and c (auxiliaries are filled by polish)."""
    v = np.zeros(prog.n_vars)
    for key, i in prog.index.items():
        if key[0] in ("x", "c"):
            v[i] = (plan.x if key[0] == "x" else plan.c)[key[1:]]
    return prog.polish(v)


def _fixed_path_from(xf_j: np.ndarray, adm_j: np.ndarray) -> np.ndarray:
    S, T = xf_j.shape
    x = np.zeros((S, T), dtype=np.int64)
    s = int(np.argmax(xf_j.sum(axis=1)))
    on = (xf_j[s] >= 0.5) & adm_j
    best, cur, best_run = 0, 0, None
    for t in range(T + 1):
        if t < T and on[t]:
            cur += 1
            continue
        if cur > best:
            best, best_run = cur, (t - cur, t)
        cur = 0
    if best_run is None:
        return x
    a, b = best_run
    level = max(1, int(math.floor(float(xf_j[s, a:b].mean()) + 1e-9)))
    x[s, a:b] = level
    return x


def repair_allocation(xf: np.ndarray, instance: SchedulingInstance) -> SchedulePlan | None:
    """Turn a fractional allocation into a valid plan, or None if repair fails.

    Round down (or snap to a fixed path when reallocation is off), shed load
    on over-full sites from the highest job index down, then fix each job's
    work budget by adding CPUs in its most valuable free cells.
    """
    pf = instance.portfolio
    J, S, T = instance.shape
    adm = admissibility(instance)
    cap = np.array([s.cpu_capacity for s in instance.sites])
    if pf.enable_realloc:
        x = np.floor(xf + 1e-9).astype(np.int64)
    else:
        x = np.stack([_fixed_path_from(xf[j], adm[j]) for j in range(J)]) if J else \
            np.zeros((0, S, T), dtype=np.int64)
    for s in range(S):
        for t in range(T):
            j = J - 1
            while x[:, s, t].sum() > cap[s] and j >= 0:
                if x[j, s, t] > 0:
                    if pf.enable_realloc:
                        x[j, s, t] -= 1
                    else:
                        x[j] = np.where(x[j] > 0, x[j] - 1, 0)
                    continue
                j -= 1
    m = marginal_values(instance)
    equality = not pf.enable_termination
    klo = np.array([s.rate_lo for s in instance.sites])
    khi = np.array([s.rate_hi for s in instance.sites])
    dt = instance.horizon.dt
    c = np.zeros((J, S, T))
    for j, job in enumerate(instance.jobs):
        cj = best_service(x[j], job.total_work, m[j], instance, equality)
        seen = set()
        while cj is None:
            state = x[j].tobytes()
            if state in seen:
                return None
            seen.add(state)
            used = x.sum(axis=0)
            if (klo[:, None] * x[j]).sum() * dt > job.total_work:
                # too many CPUs for the budget: drop the least valuable one
                cells = np.argwhere(x[j] > 0)
                worst = min(map(tuple, cells), key=lambda st: (m[j][st], st))
                if pf.enable_realloc:
                    x[j][worst] -= 1
                else:
                    x[j] = np.where(x[j] > 0, x[j] - 1, 0)
            elif not _grow(x, j, used, cap, adm[j], m[j], job.max_cpus_per_slot, pf.enable_realloc,
                           fits=klo * dt <= job.total_work):
                return None
            cj = best_service(x[j], job.total_work, m[j], instance, equality)
        c[j] = cj
    plan = SchedulePlan(x, c)
    return plan if not validate_schedule(plan, instance) else None


def _grow(x, j, used, cap, adm_j, m_j, xbar, realloc: bool, fits) -> bool:
    """Add capacity to job ``j`` in place; False when nothing more fits.

    ``fits[s]`` says whether one CPU at site ``s`` can run at its minimum rate
    without exceeding the job's work budget.
    """
    S, T = m_j.shape
    if realloc:
        free = (used < cap[:, None]) & adm_j[None, :] & (x[j] < xbar) & fits[:, None]
        # one CPU per slot at most across sites keeps the per-slot limit
        per_slot = x[j].sum(axis=0)
        free &= (per_slot < xbar)[None, :]
        if not free.any():
            return False
        cells = np.argwhere(free)
        s, t = max(map(tuple, cells), key=lambda st: (m_j[st], -st[0], -st[1]))
        x[j, s, t] += 1
        return True
    active = np.argwhere(x[j] > 0)
    if active.size == 0:
        for s in np.argsort(-m_j.max(axis=1), kind="stable"):
            if not fits[s]:
                continue
            for t in np.argsort(-m_j[s], kind="stable"):
                if adm_j[t] and used[s, t] < cap[s]:
                    x[j, s, t] = 1
                    return True
        return False
    s = int(active[0][0])
    ts = active[:, 1]
    a, b = int(ts.min()), int(ts.max()) + 1
    level = int(x[j, s, a])
    if level < xbar and np.all(used[s, a:b] < cap[s]):
        x[j, s, a:b] += 1
        return True
    for t in (a - 1, b):
        if 0 <= t < T and adm_j[t] and used[s, t] + level <= cap[s]:
            x[j, s, t] = level
            return True
    return False


def solve_program(prog: MathProgram, instance: SchedulingInstance,
                  options: SolveOptions = SolveOptions()) -> SolveResult:
    if options.relax:
        return solve_relaxed(prog, instance, options)
    backend = options.backend
    if backend == "auto":
        backend = "bb" if prog.n_vars <= options.auto_bb_max_vars else "highs"
    if backend == "bb":
        return solve_bb(prog, instance, options)
    return solve_highs(prog, instance, options)


def solve(instance: SchedulingInstance, options: SolveOptions = SolveOptions()) -> SolveResult:
    """Solve one portfolio; the queue baseline is simulated rather than optimized."""
    if instance.portfolio.fcfs:
        start = time.perf_counter()
        plan = fcfs_baseline(instance)
        ev = econ.evaluate(plan, instance).as_dict()
        return SolveResult("optimal", plan, ev["net"], {k: ev[k] for k in TERMS}, ev,
                           ev["net"], 0.0, 0, time.perf_counter() - start, "fcfs", "baseline")
    return solve_program(build_program(instance), instance, options)


def relaxation_value(prog: MathProgram) -> float:
    """Optimal value of the LP relaxation (an upper bound on the program)."""
    res, val = lp_relaxation(prog)
    if res.status == simplex.INFEASIBLE:
        return -math.inf
    return val

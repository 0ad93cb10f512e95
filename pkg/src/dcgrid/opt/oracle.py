"""Exhaustive reference solver for tiny instances.

Every integer allocation grid is enumerated (only fixed paths when
reallocation is off, since nothing else is feasible there). For each grid
the best service rates are found exactly: a continuous knapsack per job when
there is no ramp charge, otherwise a small convex program with the true
quadratic (or linear) ramp cost. Grids are visited in order of an upper
bound so the convex program runs only for the few that can still win.
"""

from __future__ import annotations

import itertools
import math
import time

import numpy as np

from .. import econ
from ..model import (Horizon, Job, PortfolioConfig, PriceTable, SchedulePlan,
                     SchedulingInstance, Site, admissibility)
from .service import best_service, marginal_values, rate_bounds
from .solve import SolveResult, TERMS

DEFAULT_LIMIT = 10 ** 7


class OracleLimitError(ValueError):
    """The enumeration space exceeds the configured limit."""

    def __init__(self, size: int, limit: int):
        super().__init__(f"search space of {size:.3e} grids exceeds the limit {limit:.0e}")
        self.size = size
        self.limit = limit


def search_space_size(instance: SchedulingInstance) -> int:
    """``prod_j (X_bar_j + 1) ** (S * active slots of j)``."""
    adm = admissibility(instance)
    S = len(instance.sites)
    size = 1
    for j, job in enumerate(instance.jobs):
        size *= (job.max_cpus_per_slot + 1) ** (S * int(adm[j].sum()))
    return size


def _job_grids(j: int, job: Job, adm_j: np.ndarray, S: int, T: int, realloc: bool):
    window = np.nonzero(adm_j)[0]
    xbar = job.max_cpus_per_slot
    if realloc:
        cells = [(s, t) for s in range(S) for t in window]
        for levels in itertools.product(range(xbar + 1), repeat=len(cells)):
            x = np.zeros((S, T), dtype=np.int64)
            for (s, t), v in zip(cells, levels):
                x[s, t] = v
            yield x
        return
    yield np.zeros((S, T), dtype=np.int64)
    for s in range(S):
        for a in range(len(window)):
            for b in range(a + 1, len(window) + 1):
                for level in range(1, xbar + 1):
                    x = np.zeros((S, T), dtype=np.int64)
                    x[s, window[a]:window[b - 1] + 1] = level
                    yield x


def _realloc_count(x: np.ndarray) -> float:
    return float(np.abs(np.diff(x, axis=-1)).sum())


def _ramp_lower_bound(usage: np.ndarray, instance: SchedulingInstance) -> np.ndarray:
    """Smallest possible ramp charge for each usage matrix in ``usage`` (N, S, T)."""
    pf = instance.portfolio
    klo, khi = rate_bounds(instance)
    lo = usage * klo[None]
    hi = usage * khi[None]
    k = np.array([s.mw_per_unit for s in instance.sites])[None, :, None]
    delta = np.array([s.ramp_tolerance_mw for s in instance.sites])[None, :, None]
    gap = np.maximum(0.0, np.maximum(lo[..., 1:] - hi[..., :-1], lo[..., :-1] - hi[..., 1:]))
    g = np.maximum(0.0, k * gap - delta)
    if pf.ramp_form == "linear":
        return pf.gamma * g.sum(axis=(1, 2))
    return pf.gamma * (g * g).sum(axis=(1, 2))


def _service_with_ramp(x: np.ndarray, instance: SchedulingInstance, m: np.ndarray):
    """Best ``c`` for a fixed ``x`` (J, S, T) under the ramp charge, or None."""
    pf = instance.portfolio
    J, S, T = x.shape
    dt = instance.horizon.dt
    klo, khi = rate_bounds(instance)
    k = np.array([s.mw_per_unit for s in instance.sites])
    delta = np.array([s.ramp_tolerance_mw for s in instance.sites])
    cells = np.argwhere(x > 0)
    n = len(cells)
    if n == 0:
        return np.zeros(x.shape), 0.0
    lo = np.array([klo[s, 0] * x[j, s, t] for j, s, t in cells])
    hi = np.array([khi[s, 0] * x[j, s, t] for j, s, t in cells])
    gain = np.array([m[j, s, t] for j, s, t in cells])
    work = np.zeros((J, n))
    for i, (j, s, t) in enumerate(cells):
        work[j, i] = dt
    W = np.array([job.total_work for job in instance.jobs])
    # load differences per (s, t >= 1) as linear maps of the cell vector
    D = np.zeros((S * (T - 1), n))
    for i, (j, s, t) in enumerate(cells):
        if t >= 1:
            D[s * (T - 1) + t - 1, i] += k[s]
        if t + 1 < T:
            D[s * (T - 1) + t, i] -= k[s]
    tol_vec = np.repeat(delta, T - 1)
    equality = not pf.enable_termination
    if pf.ramp_form == "linear":
        return _linear_ramp_lp(cells, x.shape, lo, hi, gain, work, W, D, tol_vec, pf.gamma, equality)
    return _quadratic_ramp_qp(cells, x.shape, lo, hi, gain, work, W, D, tol_vec, pf.gamma, equality)


def _linear_ramp_lp(cells, shape, lo, hi, gain, work, W, D, tol_vec, gamma, equality):
    from scipy.optimize import linprog

    n, ng = len(lo), D.shape[0]
    cost = np.concatenate([-gain, np.full(ng, gamma)])
    A_ub = [np.hstack([D, -np.eye(ng)]), np.hstack([-D, -np.eye(ng)])]
    b_ub = [tol_vec, tol_vec]
    wrows = np.hstack([work, np.zeros((work.shape[0], ng))])
    kw = {}
    if equality:
        kw = dict(A_eq=wrows, b_eq=W)
    else:
        A_ub.append(wrows)
        b_ub.append(W)
    res = linprog(cost, A_ub=np.vstack(A_ub), b_ub=np.concatenate(b_ub),
                  bounds=list(zip(lo, hi)) + [(0, None)] * ng, method="highs", **kw)
    if res.status != 0:
        return None
    c = np.zeros(shape)
    for i, (j, s, t) in enumerate(cells):
        c[j, s, t] = res.x[i]
    return c, -float(res.fun)


def _quadratic_ramp_qp(cells, shape, lo, hi, gain, work, W, D, tol_vec, gamma, equality):
    try:
        import cvxpy as cp
    except ImportError as exc:  # pragma: no cover
        raise ImportError("the quadratic-ramp oracle needs cvxpy (pip install dcgrid[oracle])") from exc
    n = len(lo)
    c = cp.Variable(n)
    g = cp.Variable(D.shape[0], nonneg=True)
    cons = [c >= lo, c <= hi, g >= D @ c - tol_vec, g >= -D @ c - tol_vec]
    cons.append(work @ c == W if equality else work @ c <= W)
    prob = cp.Problem(cp.Maximize(gain @ c - gamma * cp.sum_squares(g)), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-11, tol_gap_rel=1e-11,
               tol_feas=1e-11, tol_ktratio=1e-9)
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        return None
    cv = np.clip(np.asarray(c.value, dtype=float), lo, hi)
    out = np.zeros(shape)
    for i, (j, s, t) in enumerate(cells):
        out[j, s, t] = cv[i]
    return out, float(prob.value)


def brute_force(instance: SchedulingInstance, *, limit: int = DEFAULT_LIMIT) -> SolveResult:
    """Exact optimum by enumeration; raises OracleLimitError above ``limit`` grids."""
    pf = instance.portfolio
    if pf.fcfs:
        raise ValueError("the FCFS baseline is not an optimization portfolio")
    size = search_space_size(instance)
    if size > limit:
        raise OracleLimitError(size, limit)
    start = time.perf_counter()
    J, S, T = instance.shape
    adm = admissibility(instance)
    m = marginal_values(instance)
    equality = not pf.enable_termination
    cap = np.array([s.cpu_capacity for s in instance.sites])[:, None]

    # per-job options: allocation, best rates without ramp, and their value
    options = []
    enumerated = 1
    for j, job in enumerate(instance.jobs):
        opts = []
        count = 0
        for x in _job_grids(j, job, adm[j], S, T, pf.enable_realloc):
            count += 1
            if (x > cap).any():
                continue
            cj = best_service(x, job.total_work, m[j], instance, equality)
            if cj is None:
                continue
            val = float((m[j] * cj).sum()) - pf.rho * _realloc_count(x)
            opts.append((val, x, cj))
        enumerated *= count
        if not opts:
            return _infeasible(instance, enumerated, start)
        options.append(opts)

    # combine jobs under site capacity, keeping values and usage
    vals = np.zeros(1)
    usage = np.zeros((1, S, T), dtype=np.int16)
    picks = np.zeros((1, 0), dtype=np.int64)
    for opts in options:
        ov = np.array([o[0] for o in opts])
        ou = np.stack([o[1] for o in opts]).astype(np.int16)
        tot = usage[:, None] + ou[None]
        ok = (tot <= cap[None, None]).all(axis=(2, 3))
        a, b = np.nonzero(ok)
        vals = vals[a] + ov[b]
        usage = tot[a, b]
        picks = np.hstack([picks[a], b[:, None]])
        if vals.size == 0:
            return _infeasible(instance, enumerated, start)

    def assemble(row):
        x = np.stack([options[j][row[j]][1] for j in range(J)]) if J else np.zeros((0, S, T), np.int64)
        c = np.stack([options[j][row[j]][2] for j in range(J)]) if J else np.zeros((0, S, T))
        return x, c

    if not pf.ramp_active:
        best = int(np.argmax(vals))          # first maximum: lowest enumeration index
        x, c = assemble(picks[best])
    else:
        ub = vals - _ramp_lower_bound(usage, instance)
        order = np.argsort(-ub, kind="stable")
        best_val, x, c = -math.inf, None, None
        tol = 1e-9 * max(1.0, float(np.abs(vals).max()))
        for i in order:
            if ub[i] <= best_val + tol:
                break
            xi, _ = assemble(picks[i])
            got = _service_with_ramp(xi, instance, m)
            if got is None:
                continue
            ci, value = got
            value -= pf.rho * _realloc_count(xi)
            if value > best_val + tol:
                best_val, x, c = value, xi, ci
        if x is None:
            return _infeasible(instance, enumerated, start)
    plan = SchedulePlan(x, c)
    ev = econ.evaluate(plan, instance).as_dict()
    return SolveResult("optimal", plan, ev["net"], {k: ev[k] for k in TERMS}, ev, ev["net"], 0.0,
                       enumerated, time.perf_counter() - start, "brute_force", pf.name)


def _infeasible(instance, enumerated, start) -> SolveResult:
    return SolveResult("infeasible", None, -math.inf, {}, {}, -math.inf, math.inf, enumerated,
                       time.perf_counter() - start, "brute_force", instance.portfolio.name)


def random_instance(rng: np.random.Generator, *, n_jobs: int = 3, n_sites: int = 2,
                    n_slots: int = 4, max_cpus: int = 2, portfolio: PortfolioConfig | None = None,
                    limit: int = DEFAULT_LIMIT) -> SchedulingInstance:
    """A random instance whose search space fits under ``limit``."""
    T0 = n_slots // 2
    horizon = Horizon(T0, n_slots)
    sites = []
    for s in range(n_sites):
        p_busy = float(rng.uniform(0.5, 2.0))
        sites.append(Site(id=f"S{s}", cpu_capacity=int(rng.integers(1, 4)),
                          rate_lo=float(rng.choice([0.0, 0.5])), rate_hi=float(rng.choice([1.0, 1.5, 2.0])),
                          p_idle_mw=0.3 * p_busy, p_busy_mw=p_busy, pue=float(rng.uniform(1.1, 1.5)),
                          ramp_tolerance_mw=float(rng.uniform(0.0, 0.3))))
    while True:
        jobs = []
        for j in range(n_jobs):
            release = int(rng.integers(0, T0))
            end = int(rng.integers(release + 1, T0 + 1))
            slack = int(rng.integers(0, n_slots - end + 1))
            xbar = int(rng.integers(1, max_cpus + 1))
            work = float(rng.uniform(0.3, 1.0)) * xbar * (end - release) * horizon.dt
            jobs.append(Job(id=f"j{j}", release_slot=release, end_slot=end, total_work=work,
                            slack_slots=slack, max_cpus_per_slot=xbar,
                            svc_price_scale=float(rng.choice([1.0, 1.0, 0.1]))))
        ele = rng.uniform(-20.0, 120.0, size=(n_sites, n_slots))
        svc = rng.uniform(10.0, 80.0, size=(n_sites, n_slots))
        inst = SchedulingInstance(horizon, jobs, sites, PriceTable(ele, svc),
                                  portfolio or PortfolioConfig())
        if search_space_size(inst) <= limit:
            return inst

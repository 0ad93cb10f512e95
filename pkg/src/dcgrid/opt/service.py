"""Best service rates for a fixed CPU allocation (no ramping term).

With ``x`` fixed and no ramp charge the program separates by job into a
continuous knapsack: every cell must run at least at ``rate_lo * x`` and at
most at ``rate_hi * x``, and extra work goes to the cells with the highest
marginal value first.
"""

from __future__ import annotations

import numpy as np

from ..model import SchedulingInstance


def marginal_values(instance: SchedulingInstance) -> np.ndarray:
    """Objective gain per unit of ``c`` in each cell, shape ``(J, S, T)``."""
    J, S, T = instance.shape
    pf = instance.portfolio
    dt = instance.horizon.dt
    ele = instance.prices.electricity
    svc = instance.prices.service
    k = np.array([s.mw_per_unit for s in instance.sites])[:, None]
    m = np.empty((J, S, T))
    for j, job in enumerate(instance.jobs):
        m[j] = job.svc_price_scale * svc - ele * k + pf.phi
        d = job.delay_slots()
        m[j, :, d.start:d.stop] -= pf.eta
    return m * dt


def rate_bounds(instance: SchedulingInstance) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([s.rate_lo for s in instance.sites])[:, None]
    hi = np.array([s.rate_hi for s in instance.sites])[:, None]
    return lo, hi


def best_service(xj: np.ndarray, work: float, mj: np.ndarray, instance: SchedulingInstance,
                 equality: bool) -> np.ndarray | None:
    """Optimal ``c`` for one job given its allocation ``xj`` (S, T), or None if infeasible."""
    dt = instance.horizon.dt
    klo, khi = rate_bounds(instance)
    lo = klo * xj
    hi = khi * xj
    base = float(lo.sum()) * dt
    tol = 1e-9 * max(1.0, work)
    if base > work + tol:
        return None
    room = float((hi - lo).sum()) * dt
    if equality and base + room < work - tol:
        return None
    c = lo.astype(float).copy()
    budget = work - base
    flat_m = mj.ravel()
    order = np.argsort(-flat_m, kind="stable")
    cf = c.ravel()
    span = (hi - lo).ravel()
    for i in order:
        if budget <= 0:
            break
        if span[i] <= 0:
            continue
        if not equality and flat_m[i] <= 0:
            break
        add = min(span[i], budget / dt)
        cf[i] += add
        budget -= add * dt
    return cf.reshape(c.shape)

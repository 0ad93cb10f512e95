"""First-come-first-served queue baseline.

Jobs are taken in release order (ties by id). A job at the head of the
queue starts on the site with the fewest occupied CPUs among those with
free capacity (ties by site index) and keeps a constant allocation at
nominal rate until its work is done or its original window closes. If no
site has a free CPU the head of the queue waits, and so does everyone
behind it.
"""

from __future__ import annotations

import math

import numpy as np

from ..model import SchedulePlan, SchedulingInstance

NOMINAL_RATE = 1.0


def fcfs_baseline(instance: SchedulingInstance) -> SchedulePlan:
    J, S, T = instance.shape
    dt = instance.horizon.dt
    x = np.zeros((J, S, T), dtype=np.int64)
    c = np.zeros((J, S, T))
    order = sorted(range(J), key=lambda j: (instance.jobs[j].release_slot, instance.jobs[j].id))
    queue: list[int] = []
    pending = list(order)
    running: dict[int, tuple[int, int, float]] = {}      # job -> (site, level, rate)
    remaining = np.array([job.total_work for job in instance.jobs], dtype=float)
    capacity = np.array([site.cpu_capacity for site in instance.sites])
    # smallest remainder worth a slot; anything less is left undelivered
    eps = 1e-9

    for t in range(T):
        while pending and instance.jobs[pending[0]].release_slot <= t:
            queue.append(pending.pop(0))
        # jobs whose original window has closed leave without finishing
        for j in [j for j in running if t >= instance.jobs[j].end_slot]:
            del running[j]
        queue = [j for j in queue if t < instance.jobs[j].end_slot]
        occupied = np.zeros(S, dtype=np.int64)
        for s, level, _ in running.values():
            occupied[s] += level
        while queue:
            free = capacity - occupied
            open_sites = np.nonzero(free > 0)[0]
            if open_sites.size == 0:
                break
            s = int(open_sites[np.argmin(occupied[open_sites])])
            j = queue.pop(0)
            site = instance.sites[s]
            level = int(min(instance.jobs[j].max_cpus_per_slot, free[s]))
            rate = min(max(NOMINAL_RATE, site.rate_lo), site.rate_hi)
            running[j] = (s, level, rate)
            occupied[s] += level
        for j in list(running):
            s, level, rate = running[j]
            site = instance.sites[s]
            full = level * rate * dt
            if remaining[j] >= full - eps:
                x[j, s, t] = level
                c[j, s, t] = level * rate
                remaining[j] -= full
            else:
                # final partial slot: fewest CPUs that can still carry the remainder
                need = remaining[j] / dt
                k = min(level, max(1, math.ceil(need / site.rate_hi - 1e-12)))
                if need >= site.rate_lo * k - 1e-12:
                    x[j, s, t] = k
                    c[j, s, t] = need
                    remaining[j] = 0.0
                else:
                    del running[j]
                    continue
            if remaining[j] <= eps:
                remaining[j] = 0.0
                del running[j]
    return SchedulePlan(x, c)

"""Site load, facility power, and the economic/penalty terms of a schedule.

Everything here is evaluated directly from a SchedulePlan, independently of
how the optimizer assembled its objective, so the two can be cross-checked.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .model import (Horizon, PortfolioConfig, PriceTable, SchedulePlan,
                    SchedulingInstance, Site)


class PowerDomainError(ValueError):
    """Site load outside ``[0, max_service]``."""


def site_load(plan: SchedulePlan) -> np.ndarray:
    """Aggregate effective service per site and slot, shape ``(S, T)``."""
    return plan.c.sum(axis=0)


def site_power(L: np.ndarray, sites: Sequence[Site]) -> np.ndarray:
    """Facility power in MW from the linear utilization model.

    ``P = PUE*P_idle + PUE*(P_busy - P_idle) * L / L_max`` per site.
    """
    L = np.atleast_2d(np.asarray(L, dtype=float))
    P = np.empty_like(L)
    for s, site in enumerate(sites):
        lmax = site.max_service
        row = L[s]
        if (row < -1e-9).any() or (row > lmax * (1 + 1e-9) + 1e-9).any():
            raise PowerDomainError(f"site {site.id}: load outside [0, {lmax}]")
        P[s] = site.idle_facility_mw + site.pue * (site.p_busy_mw - site.p_idle_mw) * row / lmax
    return P


def electricity_cost(L: np.ndarray, sites: Sequence[Site], prices: PriceTable,
                     horizon: Horizon) -> float:
    """Variable draw charged over the full horizon, idle draw over the original one."""
    dt = horizon.dt
    ele = prices.electricity
    variable = 0.0
    idle = 0.0
    T0 = horizon.slot_count_original
    for s, site in enumerate(sites):
        variable += float(np.sum(ele[s] * site.mw_per_unit * L[s])) * dt
        idle += float(np.sum(ele[s, :T0])) * site.idle_facility_mw * dt
    return variable + idle


def service_price_grid(instance: SchedulingInstance) -> np.ndarray:
    """Per-job service price ``(J, S, T)``: site/slot price times the job's scale."""
    scale = np.array([j.svc_price_scale for j in instance.jobs], dtype=float)
    return scale[:, None, None] * instance.prices.service[None, :, :]


def revenue(plan: SchedulePlan, instance: SchedulingInstance) -> float:
    """Usage-based revenue on delivered service only."""
    if not instance.jobs:
        return 0.0
    return float(np.sum(service_price_grid(instance) * plan.c)) * instance.horizon.dt


def delivered_in_delay(plan: SchedulePlan, instance: SchedulingInstance) -> np.ndarray:
    """Per-job work delivered in its post-deadline slots."""
    dt = instance.horizon.dt
    out = np.zeros(len(instance.jobs))
    for j, job in enumerate(instance.jobs):
        d = job.delay_slots()
        out[j] = plan.c[j, :, d.start:d.stop].sum() * dt
    return out


def unfinished_work(plan: SchedulePlan, instance: SchedulingInstance) -> np.ndarray:
    W = np.array([j.total_work for j in instance.jobs], dtype=float)
    return W - plan.delivered(instance.horizon.dt)


def qos_penalties(plan: SchedulePlan, instance: SchedulingInstance) -> dict[str, float]:
    """Reallocation, delayed-delivery and unfinished-service penalties."""
    pf = instance.portfolio
    return {
        "P_realloc": pf.rho * float(plan.r.sum()),
        "P_delay": pf.eta * float(delivered_in_delay(plan, instance).sum()),
        "P_term": pf.phi * float(unfinished_work(plan, instance).sum()),
    }


def ramp_excess(P: np.ndarray, delta: Sequence[float]) -> np.ndarray:
    """``g[s, t] = max(0, |P[t] - P[t-1]| - delta_s)`` with ``g[:, 0] = 0``."""
    P = np.atleast_2d(P)
    g = np.zeros_like(P)
    d = np.asarray(delta, dtype=float)[:, None]
    g[:, 1:] = np.maximum(0.0, np.abs(np.diff(P, axis=1)) - d)
    return g


def tangent_square(g: np.ndarray, g_max: float, segments: int) -> np.ndarray:
    """Under-approximation of ``g**2`` by tangents at the midpoints of ``segments``
    equal pieces of ``[0, g_max]``; the error is at most ``(g_max / segments / 2)**2``."""
    mids = (np.arange(segments) + 0.5) * (g_max / segments)
    g = np.asarray(g, dtype=float)
    lines = 2.0 * mids * g[..., None] - mids * mids
    return np.maximum(0.0, lines.max(axis=-1))


def ramp_charge(P: np.ndarray, delta: Sequence[float], gamma: float,
                form: str = "quadratic", *, g_max: Sequence[float] | None = None,
                segments: int | None = None) -> tuple[float, np.ndarray]:
    """Grid-side ramping charge and the excess-variation matrix ``g``.

    For the quadratic form, passing ``g_max`` (per site) and ``segments``
    evaluates the tangent under-approximation used by the optimizer instead
    of the true square.
    """
    g = ramp_excess(P, delta)
    if form == "off" or gamma == 0:
        return 0.0, g
    if form == "quadratic":
        if segments is not None:
            sq = np.stack([tangent_square(g[s], g_max[s], segments) for s in range(g.shape[0])])
            sq[:, 0] = 0.0
            return gamma * float(np.sum(sq)), g
        return gamma * float(np.sum(g * g)), g
    if form == "linear":
        return gamma * float(np.sum(g)), g
    raise ValueError(f"unknown ramp form {form!r}")


@dataclass(frozen=True)
class CostBreakdown:
    R: float
    C_elec: float
    C_ramp: float
    P_realloc: float
    P_delay: float
    P_term: float

    @property
    def C_grid(self) -> float:
        return self.C_elec + self.C_ramp

    @property
    def P_QoS(self) -> float:
        return self.P_realloc + self.P_delay + self.P_term

    @property
    def net(self) -> float:
        return self.R - self.C_grid - self.P_QoS

    def as_dict(self) -> dict[str, float]:
        d = asdict(self)
        d.update(C_grid=self.C_grid, P_QoS=self.P_QoS, net=self.net)
        return d

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n")


def evaluate(plan: SchedulePlan, instance: SchedulingInstance, *,
             ramp_eval: str = "exact") -> CostBreakdown:
    """Full economic accounting of ``plan`` under the instance's portfolio.

    ``ramp_eval="exact"`` charges the true square for the quadratic form;
    ``"pwl"`` uses the same tangent under-approximation as the optimizer.
    """
    pf: PortfolioConfig = instance.portfolio
    L = site_load(plan)
    P = site_power(L, instance.sites)
    delta = [s.ramp_tolerance_mw for s in instance.sites]
    if ramp_eval == "pwl":
        c_ramp, _ = ramp_charge(P, delta, pf.gamma, pf.ramp_form,
                                g_max=[s.peak_facility_mw for s in instance.sites],
                                segments=pf.pwl_segments)
    elif ramp_eval == "exact":
        c_ramp, _ = ramp_charge(P, delta, pf.gamma, pf.ramp_form)
    else:
        raise ValueError(f"ramp_eval must be 'exact' or 'pwl', not {ramp_eval!r}")
    q = qos_penalties(plan, instance)
    return CostBreakdown(
        R=revenue(plan, instance),
        C_elec=electricity_cost(L, instance.sites, instance.prices, instance.horizon),
        C_ramp=c_ramp, **q)


def power_series(plan: SchedulePlan, sites: Sequence[Site]) -> tuple[np.ndarray, np.ndarray]:
    L = site_load(plan)
    return L, site_power(L, sites)


def write_power_series(L: np.ndarray, P: np.ndarray, site_ids: Sequence[str], path) -> None:
    """Write ``site,slot,L_units,P_mw`` rows."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["site", "slot", "L_units", "P_mw"])
        for s, sid in enumerate(site_ids):
            for t in range(L.shape[1]):
                w.writerow([sid, t, repr(float(L[s, t])), repr(float(P[s, t]))])


def read_power_series(path, site_ids: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    rows = list(csv.DictReader(Path(path).open(newline="")))
    pos = {sid: i for i, sid in enumerate(site_ids)}
    T = 1 + max(int(r["slot"]) for r in rows) if rows else 0
    L = np.full((len(site_ids), T), np.nan)
    P = np.full((len(site_ids), T), np.nan)
    for r in rows:
        if r["site"] not in pos:
            raise ValueError(f"{path}: unknown site {r['site']!r}")
        s, t = pos[r["site"]], int(r["slot"])
        L[s, t] = float(r["L_units"])
        P[s, t] = float(r["P_mw"])
    if np.isnan(P).any():
        raise ValueError(f"{path}: incomplete power series")
    return L, P

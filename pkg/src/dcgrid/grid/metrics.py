"""Voltage and congestion security metrics and generation cost.

Indicators per bus and slot: a voltage violation is any magnitude outside
the open band ``(v_min, v_max)`` (a value exactly on a bound counts). A
branch is congested when its loading exceeds a positive rating. Slots whose
power flow did not converge are excluded from every metric and listed.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .case import GenCost, NetworkCase
from .powerflow import PFSolution


class MetricsError(ValueError):
    pass


@dataclass
class SecurityReport:
    v_min: float
    v_max: float
    n_buses: int
    n_slots: int
    excluded_slots: list[int]
    C_V: int
    C_C: int
    H_V: int
    AVDI: float                          # percent of nominal
    MVDI: float                          # percent of nominal
    voltage_counts: list[int]            # per included slot
    congestion_counts: list[int]
    violations: list[tuple[int, str, str, float]] = field(default_factory=list)
    generation_cost: float | None = None

    def as_dict(self, *, with_violations: bool = False) -> dict:
        d = asdict(self)
        if not with_violations:
            d.pop("violations")
        return d

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n")

    def write_violations(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["slot", "bus_or_line", "kind", "magnitude"])
            for row in self.violations:
                w.writerow([row[0], row[1], row[2], repr(float(row[3]))])


def voltage_exceedance(vm: np.ndarray, v_min: float, v_max: float) -> np.ndarray:
    """``max(0, v_min - V, V - v_max)`` elementwise, in pu."""
    return np.maximum(0.0, np.maximum(v_min - vm, vm - v_max))


def security_metrics(vm: np.ndarray, flow_mva: np.ndarray, ratings: Sequence[float], *,
                     v_min: float = 0.94, v_max: float = 1.06,
                     converged: Sequence[bool] | None = None,
                     bus_labels: Sequence | None = None,
                     line_labels: Sequence | None = None,
                     slots: Sequence[int] | None = None) -> SecurityReport:
    """Exposure, worst-hour concentration and deviation indices.

    ``vm`` is (T, N) in pu, ``flow_mva`` is (T, L). Ratings of 0 mean
    unlimited. AVDI averages the exceedance over buses and included slots;
    both indices are reported in percent of 1 pu.
    """
    vm = np.atleast_2d(np.asarray(vm, dtype=float))
    flow = np.atleast_2d(np.asarray(flow_mva, dtype=float))
    T, N = vm.shape
    if T == 0:
        raise MetricsError("no slots to evaluate")
    ok = np.ones(T, dtype=bool) if converged is None else np.asarray(converged, dtype=bool)
    slot_ids = list(range(T)) if slots is None else list(slots)
    bus_labels = list(range(N)) if bus_labels is None else list(bus_labels)
    rating = np.asarray(ratings, dtype=float)
    nl = rating.size
    line_labels = list(range(nl)) if line_labels is None else list(line_labels)
    excluded = [slot_ids[t] for t in range(T) if not ok[t]]
    if not ok.any():
        raise MetricsError("no converged slots to evaluate")
    v = vm[ok]
    fl = flow[ok] if nl else np.zeros((int(ok.sum()), 0))
    ind_v = (v <= v_min) | (v >= v_max)
    limited = rating > 0
    ind_c = (fl > rating[None, :]) & limited[None, :]
    dv = voltage_exceedance(v, v_min, v_max)
    counts_v = ind_v.sum(axis=1)
    counts_c = ind_c.sum(axis=1)
    violations = []
    kept = [slot_ids[t] for t in range(T) if ok[t]]
    for k, t in enumerate(kept):
        for n in np.nonzero(ind_v[k])[0]:
            kind = "undervoltage" if v[k, n] <= v_min else "overvoltage"
            violations.append((t, f"bus:{bus_labels[n]}", kind, float(dv[k, n])))
        for l in np.nonzero(ind_c[k])[0]:
            violations.append((t, f"line:{line_labels[l]}", "overload", float(fl[k, l] - rating[l])))
    return SecurityReport(
        v_min=v_min, v_max=v_max, n_buses=N, n_slots=len(kept), excluded_slots=excluded,
        C_V=int(counts_v.sum()), C_C=int(counts_c.sum()), H_V=int(counts_v.max()),
        AVDI=100.0 * float(dv.sum()) / (N * len(kept)), MVDI=100.0 * float(dv.max()),
        voltage_counts=counts_v.astype(int).tolist(), congestion_counts=counts_c.astype(int).tolist(),
        violations=violations)


def branch_labels(case: NetworkCase) -> list[str]:
    return [f"{b.f}-{b.t}" for b in case.branches]


def report_from_solutions(case: NetworkCase, solutions: Sequence[PFSolution], *,
                          v_min: float = 0.94, v_max: float = 1.06) -> SecurityReport:
    vm = np.array([s.vm for s in solutions])
    flow = np.array([s.flow_mva for s in solutions])
    ratings = [b.rate_mva if b.in_service else 0.0 for b in case.branches]
    return security_metrics(vm, flow, ratings, v_min=v_min, v_max=v_max,
                            converged=[s.converged for s in solutions],
                            bus_labels=case.bus_ids, line_labels=branch_labels(case))


def matched_costs(case: NetworkCase, *, allow_matching: bool = True) -> list[GenCost]:
    """Cost curve per generator; ones without data borrow the curve of the
    costed generator whose ``pmax`` is closest (ties: lowest index)."""
    donors = [(k, g) for k, g in enumerate(case.gens) if g.cost is not None]
    out = []
    for k, g in enumerate(case.gens):
        if g.cost is not None:
            out.append(g.cost)
            continue
        if not allow_matching:
            raise MetricsError(f"generator {k} at bus {g.bus} has no cost data")
        if not donors:
            raise MetricsError("no generator has cost data to match against")
        _, donor = min(donors, key=lambda kg: (abs(kg[1].pmax - g.pmax), kg[0]))
        out.append(donor.cost)
    return out


def generation_cost(case: NetworkCase, solutions: Sequence[PFSolution], dt: float = 1.0, *,
                    allow_matching: bool = True) -> float:
    """Sum over converged slots and in-service generators of ``cost(P) * dt``."""
    costs = matched_costs(case, allow_matching=allow_matching)
    total = 0.0
    for sol in solutions:
        if not sol.converged:
            continue
        for k, g in enumerate(case.gens):
            if g.in_service:
                total += float(costs[k](sol.pg[k])) * dt
    return total

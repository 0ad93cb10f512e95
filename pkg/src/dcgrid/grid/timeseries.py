"""Per-slot network snapshots from background profiles, PV output and DC load."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .case import CaseError, NetworkCase
from .powerflow import PFOptions, PFSolution, ac_power_flow


@dataclass(frozen=True)
class Profiles:
    """Background bus loads (T, N) in MW/MVAr and PV output (T,) in MW."""

    load_p: np.ndarray
    load_q: np.ndarray
    pv_mw: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.load_p.shape[0]

    @classmethod
    def static(cls, case: NetworkCase, T: int, pv_mw: float | None = None) -> "Profiles":
        p = np.tile([b.pd for b in case.buses], (T, 1))
        q = np.tile([b.qd for b in case.buses], (T, 1))
        pv = None if pv_mw is None else np.full(T, float(pv_mw))
        return cls(p, q, pv)


def find_generator(case: NetworkCase, bus: int) -> int:
    for k, g in enumerate(case.gens):
        if g.bus == bus:
            return k
    raise CaseError(f"no generator at bus {bus}")


def build_timeseries_case(case: NetworkCase, dc_power_mw: np.ndarray, site_ids: Sequence[str],
                          site_bus: Mapping[str, int], profiles: Profiles,
                          pv_gen: int | None = None) -> list[NetworkCase]:
    """One snapshot per slot: background load plus DC power at each site's bus.

    DC load is active power only (unity power factor). The PV generator's
    output follows ``profiles.pv_mw`` capped at its ``pmax``.
    """
    dc = np.atleast_2d(np.asarray(dc_power_mw, dtype=float))
    if dc.shape[0] != len(site_ids):
        raise CaseError("dc power rows do not match the site list")
    T = dc.shape[1]
    if profiles.T != T or (profiles.pv_mw is not None and len(profiles.pv_mw) != T):
        raise CaseError(f"profile length {profiles.T} does not match horizon {T}")
    n = len(case.buses)
    if profiles.load_p.shape != (T, n) or profiles.load_q.shape != (T, n):
        raise CaseError("background profile shape does not match the bus count")
    pos = case.bus_index()
    cols = []
    for sid in site_ids:
        if sid not in site_bus:
            raise CaseError(f"site {sid} is not mapped to a bus")
        if site_bus[sid] not in pos:
            raise CaseError(f"site {sid} mapped to unknown bus {site_bus[sid]}")
        cols.append(pos[site_bus[sid]])
    if profiles.pv_mw is not None and pv_gen is None:
        raise CaseError("PV profile given without a PV generator index")
    snaps = []
    for t in range(T):
        pd = profiles.load_p[t].copy()
        for s, col in enumerate(cols):
            pd[col] += dc[s, t]
        snap = case.with_loads(pd, profiles.load_q[t])
        if profiles.pv_mw is not None:
            cap = case.gens[pv_gen].pmax
            snap = snap.with_gen_output(pv_gen, min(max(0.0, float(profiles.pv_mw[t])), cap))
        snaps.append(snap)
    return snaps


def _run(args):
    snap, options = args
    return ac_power_flow(snap, options)


def run_power_flows(snapshots: Sequence[NetworkCase], options: PFOptions = PFOptions(),
                    workers: int = 1) -> list[PFSolution]:
    """Solve every snapshot; results come back in slot order."""
    jobs = [(s, options) for s in snapshots]
    if workers <= 1 or len(jobs) < 2:
        return [_run(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run, jobs))

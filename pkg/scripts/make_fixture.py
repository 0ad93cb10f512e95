"""Regenerate the synthetic desk fixture shipped in ``src/dcgrid/data``.

All values are synthetic: a 30-job trace, three zonal price series over a
48-slot horizon, flat per-site service prices, and a 14-bus case with DC
sites at buses 5/9/13 and a 480 MW PV plant at bus 11.
"""

from __future__ import annotations

import csv
from dataclasses import replace
from pathlib import Path

import numpy as np

from dcgrid.grid.case import GenCost, Generator, bundled_case, write_case
from dcgrid.grid.powerflow import ac_power_flow

DATA = Path(__file__).resolve().parents[1] / "src" / "dcgrid" / "data"
T0, T = 24, 48
ZONES = ("LZ_HOUSTON", "LZ_NORTH", "LZ_SOUTH")
SITES = ("HOUSTON", "NORTH", "SOUTH")


def jobs(rng):
    rows = []
    low = set(rng.choice(30, size=4, replace=False).tolist())
    for j in range(30):
        release = int(rng.integers(0, 16))
        dur = int(rng.integers(4, 13))
        end = min(T0, release + dur)
        rows.append([f"j{j + 1:03d}", release, end, int(rng.integers(2, 11)),
                     int(rng.integers(1, 5)), 0.1 if j in low else 1.0])
    with (DATA / "jobs.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["job_id", "release_slot", "end_slot", "cpus", "slack_slots", "svc_price_scale"])
        w.writerows(rows)


def prices(rng):
    hour = np.arange(T) % 24
    base = 35 + 30 * np.exp(-((hour - 8) / 2.5) ** 2) + 55 * np.exp(-((hour - 19) / 2.0) ** 2)
    base -= 15 * np.exp(-((hour - 3) / 2.5) ** 2)
    series = {
        "LZ_HOUSTON": base * 1.05 + rng.normal(0, 12, T),
        "LZ_NORTH": base * 0.9 - 18 * np.exp(-((hour - 2) / 2.0) ** 2) + rng.normal(0, 12, T),
        "LZ_SOUTH": base + rng.normal(0, 12, T),
    }
    series["LZ_HOUSTON"][[19, 43]] += 180.0        # scarcity spikes
    series["LZ_NORTH"][[3, 4, 27]] = [-12.0, -8.5, -5.0]   # negative prices
    with (DATA / "prices.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["zone", "slot", "price_usd_per_mwh"])
        for z in ZONES:
            for t in range(T):
                w.writerow([z, t, f"{series[z][t]:.2f}"])
    with (DATA / "service_prices.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["site", "slot", "price_usd_per_cpu_hour"])
        for s, level in zip(SITES, (125.0, 115.0, 120.0)):
            for t in range(T):
                w.writerow([s, t, f"{level:.2f}"])


PV_ANCHOR = 60.0         # winter peak output of the PV plant, MW


def case():
    c = bundled_case("case14")
    pv = Generator(bus=11, pg=0.0, qg=0.0, qmax=0.0, qmin=0.0, vg=1.0, pmax=480.0,
                   cost=GenCost(2, (0.0, 0.0, 0.0)))
    c = replace(c, gens=c.gens + (pv,), name="case14_dc")
    pos = c.bus_index()
    qd = [b.qd for b in c.buses]
    # ratings: 1.25 x the heaviest flow over DC load {0, 80 MW per site} and PV {0, peak},
    # rounded to 10 MVA with a 20 MVA floor
    flows = []
    for dc in (0.0, 80.0):
        pd = np.array([b.pd for b in c.buses])
        for bus in (5, 9, 13):
            pd[pos[bus]] += dc
        loaded = c.with_loads(pd, qd)
        for pv_mw in (0.0, PV_ANCHOR):
            flows.append(ac_power_flow(loaded.with_gen_output(len(c.gens) - 1, pv_mw)).flow_mva)
    ratings = np.maximum(20.0, np.round(1.25 * np.max(flows, axis=0) / 10.0) * 10.0)
    branches = tuple(replace(br, rate_mva=float(r)) for br, r in zip(c.branches, ratings))
    write_case(replace(c, branches=branches), DATA / "case14_dc.m")


if __name__ == "__main__":
    rng = np.random.default_rng(20250)
    jobs(rng)
    prices(rng)
    case()

"""Readers and writers for job traces and price files.

Jobs CSV columns: ``job_id,release_slot,end_slot,cpus,slack_slots,svc_price_scale``
(slots 0-based, ``end_slot`` exclusive). Prices CSV: ``zone,slot,price_usd_per_mwh``.
Service prices CSV: ``site,slot,price_usd_per_cpu_hour``. Plan CSV: ``job_id,site,slot,x,c``
(nonzero cells only).
"""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import Horizon, Job, ModelError, PriceTable, SchedulePlan

logger = logging.getLogger(__name__)

JOB_COLUMNS = ("job_id", "release_slot", "end_slot", "cpus", "slack_slots", "svc_price_scale")


class IngestError(ValueError):
    """Malformed input file; message carries the file and line number."""


def calibrate_work(cpus: int, duration_slots: int, dt: float, work_rate: float = 1.0) -> float:
    """Total work ``W = cpus * duration * dt * work_rate`` in CPU-hours."""
    return cpus * duration_slots * dt * work_rate


def _open_rows(path, required: Sequence[str]):
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise IngestError(f"{path}: missing columns {missing}")
        # header is line 1
        yield from ((reader.line_num, row) for row in reader)


def ingest_jobs(path, horizon: Horizon, *, work_rate: float = 1.0,
                default_slack: int = 0) -> list[Job]:
    """Read a jobs CSV into Job objects.

    Rows with a non-positive duration are logged and skipped. Any other
    malformed row raises IngestError naming the line.
    """
    jobs = []
    optional = {"slack_slots", "svc_price_scale"}
    required = [c for c in JOB_COLUMNS if c not in optional]
    for line, row in _open_rows(path, required):
        try:
            release = int(row["release_slot"])
            end = int(row["end_slot"])
            cpus = int(row["cpus"])
            slack = int(row.get("slack_slots") or default_slack)
            scale = float(row.get("svc_price_scale") or 1.0)
        except (TypeError, ValueError) as exc:
            raise IngestError(f"{path}:{line}: {exc}") from None
        if end <= release:
            logger.warning("%s:%d: job %s has non-positive duration, skipped",
                           path, line, row["job_id"])
            continue
        try:
            jobs.append(Job(
                id=row["job_id"], release_slot=release, end_slot=end,
                total_work=calibrate_work(cpus, end - release, horizon.dt, work_rate),
                slack_slots=slack, max_cpus_per_slot=cpus, svc_price_scale=scale))
        except ModelError as exc:
            raise IngestError(f"{path}:{line}: {exc}") from None
        if end + slack > horizon.T:
            raise IngestError(f"{path}:{line}: job {row['job_id']} window plus slack "
                              f"ends at {end + slack} > horizon {horizon.T}")
    return jobs


def write_jobs(jobs: Iterable[Job], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(JOB_COLUMNS)
        for job in jobs:
            w.writerow([job.id, job.release_slot, job.end_slot, job.max_cpus_per_slot,
                        job.slack_slots, repr(float(job.svc_price_scale))])


def ingest_trace(path, horizon: Horizon, *, slack_slots: int = 24,
                 start_offset_s: float = 0.0) -> list[dict]:
    """Map a raw trace (``job_id,submit_time_s,duration_s,cpus``) to jobs-CSV rows.

    Times are converted to slots of ``horizon.dt`` hours; durations are rounded
    up to whole slots. Jobs whose window plus slack would leave the horizon
    are dropped with a log message.
    """
    slot_s = horizon.dt * 3600.0
    rows = []
    for line, row in _open_rows(path, ("job_id", "submit_time_s", "duration_s", "cpus")):
        try:
            submit = float(row["submit_time_s"]) - start_offset_s
            dur = float(row["duration_s"])
            cpus = max(1, math.ceil(float(row["cpus"])))
        except ValueError as exc:
            raise IngestError(f"{path}:{line}: {exc}") from None
        if dur <= 0:
            logger.warning("%s:%d: non-positive duration, skipped", path, line)
            continue
        release = int(math.floor(submit / slot_s))
        end = release + math.ceil(dur / slot_s - 1e-9)
        if release < 0 or end > horizon.slot_count_original or end + slack_slots > horizon.T:
            logger.info("%s:%d: job %s outside the study horizon, dropped", path, line, row["job_id"])
            continue
        rows.append(dict(job_id=row["job_id"], release_slot=release, end_slot=end,
                         cpus=cpus, slack_slots=slack_slots, svc_price_scale=1.0))
    return rows


def flag_low_value(jobs: Sequence[Job], count: int, *, scale: float = 0.10,
                   seed: int = 0) -> list[Job]:
    """Scale the service price of ``count`` pseudo-randomly chosen jobs by ``scale``."""
    from dataclasses import replace

    if count > len(jobs):
        raise ValueError(f"cannot flag {count} of {len(jobs)} jobs")
    rng = np.random.default_rng(seed)
    picked = set(rng.choice(len(jobs), size=count, replace=False).tolist())
    return [replace(j, svc_price_scale=j.svc_price_scale * scale) if i in picked else j
            for i, j in enumerate(jobs)]


def _dense_table(path, key_col: str, value_col: str, keys: Sequence[str],
                 n_slots: int, what: str) -> np.ndarray:
    pos = {k: i for i, k in enumerate(keys)}
    table = np.full((len(keys), n_slots), np.nan)
    seen_keys = set()
    for line, row in _open_rows(path, (key_col, "slot", value_col)):
        key = row[key_col].strip()
        try:
            slot = int(row["slot"])
            value = float(row[value_col])
        except ValueError as exc:
            raise IngestError(f"{path}:{line}: {exc}") from None
        if key not in pos:
            continue
        if not 0 <= slot < n_slots:
            raise IngestError(f"{path}:{line}: slot {slot} outside 0..{n_slots - 1}")
        i = pos[key]
        if not np.isnan(table[i, slot]):
            raise IngestError(f"{path}:{line}: duplicate ({key}, {slot})")
        if not math.isfinite(value):
            raise IngestError(f"{path}:{line}: non-finite {what}")
        table[i, slot] = value
        seen_keys.add(key)
    unknown = [k for k in keys if k not in seen_keys]
    if unknown:
        raise IngestError(f"{path}: unknown {key_col} id(s) {unknown}: no rows in file")
    gaps = [(keys[i], int(t)) for i, t in zip(*np.nonzero(np.isnan(table)))]
    if gaps:
        shown = ", ".join(f"({k}, {t})" for k, t in gaps[:20])
        more = f" and {len(gaps) - 20} more" if len(gaps) > 20 else ""
        raise IngestError(f"{path}: missing {what} for {shown}{more}")
    return table


def ingest_prices(path, zone_of_site: Mapping[str, str], site_ids: Sequence[str],
                  n_slots: int) -> np.ndarray:
    """Electricity prices ``(S, T)`` in $/MWh; each site takes its zone's series."""
    zones = []
    for sid in site_ids:
        if sid not in zone_of_site:
            raise IngestError(f"site {sid} has no zone assignment")
        zones.append(zone_of_site[sid])
    uniq = list(dict.fromkeys(zones))
    table = _dense_table(path, "zone", "price_usd_per_mwh", uniq, n_slots, "electricity price")
    return table[[uniq.index(z) for z in zones]]


def ingest_service_prices(path, site_ids: Sequence[str], n_slots: int) -> np.ndarray:
    """Service prices ``(S, T)`` in $/CPU-h."""
    return _dense_table(path, "site", "price_usd_per_cpu_hour", list(site_ids),
                        n_slots, "service price")


def load_price_table(prices_path, zone_of_site: Mapping[str, str], site_ids: Sequence[str],
                     n_slots: int, service_path=None, service_default: float | None = None) -> PriceTable:
    ele = ingest_prices(prices_path, zone_of_site, site_ids, n_slots)
    if service_path is not None:
        svc = ingest_service_prices(service_path, site_ids, n_slots)
    elif service_default is not None:
        svc = np.full_like(ele, float(service_default))
    else:
        raise IngestError("need a service-price file or a default service price")
    return PriceTable(ele, svc)


def write_price_table(prices: PriceTable, site_ids: Sequence[str], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["site", "slot", "price_usd_per_mwh", "price_usd_per_cpu_hour"])
        S, T = prices.electricity.shape
        for s in range(S):
            for t in range(T):
                w.writerow([site_ids[s], t, repr(float(prices.electricity[s, t])),
                            repr(float(prices.service[s, t]))])


PLAN_COLUMNS = ("job_id", "site", "slot", "x", "c")


def write_plan(plan: SchedulePlan, job_ids: Sequence[str], site_ids: Sequence[str], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLAN_COLUMNS)
        for j, s, t in zip(*np.nonzero((plan.x != 0) | (plan.c != 0))):
            w.writerow([job_ids[j], site_ids[s], int(t), int(plan.x[j, s, t]),
                        repr(float(plan.c[j, s, t]))])


def read_plan(path, job_ids: Sequence[str], site_ids: Sequence[str], n_slots: int) -> SchedulePlan:
    jpos = {k: i for i, k in enumerate(job_ids)}
    spos = {k: i for i, k in enumerate(site_ids)}
    x = np.zeros((len(job_ids), len(site_ids), n_slots), dtype=np.int64)
    c = np.zeros(x.shape)
    for line, row in _open_rows(path, PLAN_COLUMNS):
        try:
            j, s, t = jpos[row["job_id"]], spos[row["site"]], int(row["slot"])
            if not 0 <= t < n_slots:
                raise ValueError(f"slot {t} outside the horizon")
            x[j, s, t] = int(row["x"])
            c[j, s, t] = float(row["c"])
        except (KeyError, ValueError) as exc:
            raise IngestError(f"{path}:{line}: {exc}") from None
    return SchedulePlan(x, c)

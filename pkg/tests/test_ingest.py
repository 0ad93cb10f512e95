import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dcgrid.ingest import (IngestError, calibrate_work, flag_low_value, ingest_jobs, ingest_prices,
                           ingest_service_prices, ingest_trace, load_price_table, read_plan,
                           write_jobs, write_plan)
from dcgrid.model import Horizon, Job, SchedulePlan

HEADER = "job_id,release_slot,end_slot,cpus,slack_slots,svc_price_scale\n"


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_calibration_rule():
    assert calibrate_work(4, 6, 1.0) == 24.0
    assert calibrate_work(4, 6, 0.5, work_rate=2.0) == 24.0


def test_job_row_calibrated(tmp_path):
    p = _write(tmp_path, "jobs.csv", HEADER + "a,0,6,4,0,1.0\n")
    (job,) = ingest_jobs(p, Horizon(6, 6))
    assert job.total_work == 24.0
    assert job.max_cpus_per_slot == 4


def test_zero_duration_rejected_and_logged(tmp_path, caplog):
    p = _write(tmp_path, "jobs.csv", HEADER + "a,2,2,4,0,1.0\nb,0,1,1,0,1.0\n")
    with caplog.at_level(logging.WARNING):
        jobs = ingest_jobs(p, Horizon(6, 6))
    assert [j.id for j in jobs] == ["b"]
    assert "non-positive duration" in caplog.text


@pytest.mark.parametrize("row,match", [
    ("a,zero,2,1,0,1.0\n", r"jobs.csv:2"),
    ("a,0,2,1,9,1.0\n", r"horizon"),
])
def test_malformed_rows_name_line(tmp_path, row, match):
    p = _write(tmp_path, "jobs.csv", HEADER + row)
    with pytest.raises(IngestError, match=match):
        ingest_jobs(p, Horizon(6, 6))


def test_missing_column(tmp_path):
    p = _write(tmp_path, "jobs.csv", "job_id,release_slot\na,0\n")
    with pytest.raises(IngestError, match="missing columns"):
        ingest_jobs(p, Horizon(6, 6))


def test_optional_columns_default(tmp_path):
    p = _write(tmp_path, "jobs.csv", "job_id,release_slot,end_slot,cpus\na,0,2,1\n")
    (job,) = ingest_jobs(p, Horizon(2, 5), default_slack=3)
    assert job.slack_slots == 3 and job.svc_price_scale == 1.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 10), st.integers(1, 5), st.integers(1, 8),
                          st.integers(0, 4), st.sampled_from([1.0, 0.1, 0.25])),
                min_size=1, max_size=8))
def test_jobs_round_trip(tmp_path_factory, rows):
    h = Horizon(15, 20)
    jobs = [Job(f"j{k}", r, r + d, float(c * d), slack_slots=sl, max_cpus_per_slot=c,
                svc_price_scale=sc) for k, (r, d, c, sl, sc) in enumerate(rows)]
    p = tmp_path_factory.mktemp("rt") / "jobs.csv"
    write_jobs(jobs, p)
    assert ingest_jobs(p, h) == jobs


def test_trace_mapping(tmp_path):
    p = _write(tmp_path, "trace.csv", "job_id,submit_time_s,duration_s,cpus\n"
                                      "a,0,3600,4\nb,5400,1800,2.5\nc,0,0,1\nd,86000,7200,1\n")
    rows = ingest_trace(p, Horizon(24, 48), slack_slots=24)
    assert [(r["job_id"], r["release_slot"], r["end_slot"], r["cpus"]) for r in rows] == [
        ("a", 0, 1, 4), ("b", 1, 2, 3)]


def test_low_value_flagging_is_seeded():
    jobs = [Job(f"j{k}", 0, 1, 1.0) for k in range(100)]
    a = flag_low_value(jobs, 30, seed=7)
    b = flag_low_value(jobs, 30, seed=7)
    assert a == b
    scales = sorted({j.svc_price_scale for j in a})
    assert scales == [0.1, 1.0]
    assert sum(j.svc_price_scale == 0.1 for j in a) == 30
    with pytest.raises(ValueError):
        flag_low_value(jobs[:3], 4)


# ---------------------------------------------------------------- prices

def _price_file(tmp_path, zones, T, *, drop=None, dup=None, value=lambda z, t: 30.0):
    lines = ["zone,slot,price_usd_per_mwh"]
    for z in zones:
        for t in range(T):
            if (z, t) == drop:
                continue
            lines.append(f"{z},{t},{value(z, t)}")
    if dup:
        lines.append(f"{dup[0]},{dup[1]},1.0")
    return _write(tmp_path, "prices.csv", "\n".join(lines) + "\n")


def test_three_zones_map_to_sites(tmp_path):
    zones = ["LZ_HOUSTON", "LZ_NORTH", "LZ_SOUTH"]
    p = _price_file(tmp_path, zones, 96, value=lambda z, t: zones.index(z) * 100 + t)
    table = ingest_prices(p, {"HOUSTON": "LZ_HOUSTON", "NORTH": "LZ_NORTH", "SOUTH": "LZ_SOUTH"},
                          ["HOUSTON", "NORTH", "SOUTH"], 96)
    assert table.shape == (3, 96)
    assert table[2, 5] == 205.0


def test_uniform_prices(tmp_path):
    p = _price_file(tmp_path, ["Z"], 4)
    table = ingest_prices(p, {"a": "Z", "b": "Z"}, ["a", "b"], 4)
    assert np.all(table == 30.0)


def test_missing_slot_named(tmp_path):
    p = _price_file(tmp_path, ["Z"], 4, drop=("Z", 2))
    with pytest.raises(IngestError, match=r"\(Z, 2\)"):
        ingest_prices(p, {"a": "Z"}, ["a"], 4)


def test_duplicate_slot(tmp_path):
    p = _price_file(tmp_path, ["Z"], 2, dup=("Z", 1))
    with pytest.raises(IngestError, match="duplicate"):
        ingest_prices(p, {"a": "Z"}, ["a"], 2)


def test_unknown_zone(tmp_path):
    p = _price_file(tmp_path, ["Z"], 2)
    with pytest.raises(IngestError, match="unknown zone"):
        ingest_prices(p, {"a": "Y"}, ["a"], 2)


def test_negative_prices_accepted(tmp_path):
    p = _price_file(tmp_path, ["Z"], 2, value=lambda z, t: -12.5)
    assert ingest_prices(p, {"a": "Z"}, ["a"], 2).tolist() == [[-12.5, -12.5]]


def test_service_prices(tmp_path):
    p = _write(tmp_path, "svc.csv", "site,slot,price_usd_per_cpu_hour\na,0,1.5\na,1,2.5\n")
    assert ingest_service_prices(p, ["a"], 2).tolist() == [[1.5, 2.5]]
    ele = _price_file(tmp_path, ["Z"], 2)
    t = load_price_table(ele, {"a": "Z"}, ["a"], 2, service_default=40.0)
    assert t.service.tolist() == [[40.0, 40.0]]
    with pytest.raises(IngestError):
        load_price_table(ele, {"a": "Z"}, ["a"], 2)


# ---------------------------------------------------------------- plans

def test_plan_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    x = rng.integers(0, 3, size=(3, 2, 5)) * (rng.random((3, 2, 5)) < 0.5)
    c = x * rng.uniform(0.5, 2.0, size=x.shape)
    plan = SchedulePlan(x, c)
    p = tmp_path / "plan.csv"
    write_plan(plan, ["a", "b", "c"], ["s", "t"], p)
    back = read_plan(p, ["a", "b", "c"], ["s", "t"], 5)
    assert np.array_equal(back.x, plan.x) and np.array_equal(back.c, plan.c)


def test_plan_unknown_job(tmp_path):
    p = _write(tmp_path, "plan.csv", "job_id,site,slot,x,c\nzz,s,0,1,1.0\n")
    with pytest.raises(IngestError, match="plan.csv:2"):
        read_plan(p, ["a"], ["s"], 2)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_instance, make_site
from dcgrid.model import Job, validate_schedule
from dcgrid.opt.fcfs import fcfs_baseline
from dcgrid.opt.solve import solve


def _sites(n, cpus):
    return [make_site(f"s{k}", cpus=cpus) for k in range(n)]


def test_identical_jobs_spread_over_sites():
    jobs = [Job(f"j{k}", 0, 3, 3.0) for k in range(2)]
    plan = fcfs_baseline(make_instance(jobs, _sites(2, 4), 3, portfolio="baseline"))
    assert plan.x[0, 0].sum() > 0 and plan.x[0, 1].sum() == 0
    assert plan.x[1, 1].sum() > 0 and plan.x[1, 0].sum() == 0


def test_exact_fill_is_fully_delivered():
    job = Job("j", 1, 4, 6.0, max_cpus_per_slot=2)
    inst = make_instance([job], _sites(1, 4), 4, portfolio="baseline")
    plan = fcfs_baseline(inst)
    assert plan.x[0, 0].tolist() == [0, 2, 2, 2]
    assert plan.delivered(1.0)[0] == pytest.approx(job.total_work)


def test_third_job_waits_for_first_free_site():
    jobs = [Job("a", 0, 6, 4.0, max_cpus_per_slot=2),    # two slots
            Job("b", 0, 6, 6.0, max_cpus_per_slot=2),    # three slots
            Job("c", 0, 6, 2.0, max_cpus_per_slot=2)]
    plan = fcfs_baseline(make_instance(jobs, _sites(2, 2), 6, portfolio="baseline"))
    assert plan.x[0, 0].tolist() == [2, 2, 0, 0, 0, 0]
    assert plan.x[1, 1].tolist() == [2, 2, 2, 0, 0, 0]
    assert plan.x[2, 0].tolist() == [0, 0, 2, 0, 0, 0]


def test_unfinished_remainder_is_left_undelivered():
    job = Job("j", 0, 2, 10.0, max_cpus_per_slot=1)
    inst = make_instance([job], _sites(1, 1), 2, 4, portfolio="baseline")
    plan = fcfs_baseline(inst)
    assert plan.x[0, 0].tolist() == [1, 1, 0, 0]
    assert validate_schedule(plan, inst) == []


def test_baseline_portfolio_is_simulated():
    jobs = [Job(f"j{k}", k, k + 2, 2.0) for k in range(3)]
    res = solve(make_instance(jobs, _sites(2, 2), 5, portfolio="baseline"))
    assert res.backend == "fcfs" and res.status == "optimal"


def _paired_stream(arrivals):
    jobs = []
    for k, (release, length, xbar) in enumerate(arrivals):
        for twin in "ab":
            jobs.append(Job(f"j{k:02d}{twin}", release, release + length, float(xbar * length),
                            max_cpus_per_slot=xbar))
    return jobs


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(1, 4), st.integers(1, 3)),
                min_size=1, max_size=8), st.integers(1, 6))
def test_symmetric_sites_stay_balanced(arrivals, cpus):
    """Identical sites fed a stream of identical job pairs stay within one job's cap."""
    jobs = _paired_stream(arrivals)
    T = max(j.end_slot for j in jobs)
    inst = make_instance(jobs, _sites(2, cpus), T, portfolio="baseline")
    plan = fcfs_baseline(inst)
    assert validate_schedule(plan, inst) == []
    occ = plan.x.sum(axis=0)
    xbar = max(j.max_cpus_per_slot for j in jobs)
    assert np.abs(occ[0] - occ[1]).max() <= xbar


def test_unpaired_stream_can_drift():
    """Staggered single arrivals are not covered by the balance guarantee."""
    jobs = [Job("a", 0, 2, 2.0), Job("b", 1, 3, 2.0), Job("c", 2, 4, 2.0), Job("d", 2, 4, 2.0)]
    occ = fcfs_baseline(make_instance(jobs, _sites(2, 4), 4, portfolio="baseline")).x.sum(axis=0)
    assert np.abs(occ[0] - occ[1]).max() == 2

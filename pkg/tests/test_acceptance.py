"""Exit criteria. Each test records a one-line verdict printed after the run."""

import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import make_instance, make_site
from dcgrid import econ
from dcgrid.cli import ORDER_CHAIN, grid_setup, portfolio_instance, verify_order
from dcgrid.config import solve_options_for
from dcgrid.grid.case import bundled_case
from dcgrid.grid.metrics import security_metrics
from dcgrid.grid.powerflow import ac_power_flow
from dcgrid.model import PORTFOLIOS, Job, PortfolioConfig, validate_schedule
from dcgrid.opt.fcfs import fcfs_baseline
from dcgrid.opt.oracle import brute_force, random_instance
from dcgrid.opt.solve import SolveOptions, solve
from dcgrid.scenario import (TARGET, McConfig, find_threshold, plan_quantities, run_monte_carlo,
                             sweep_coefficient, with_coefficient)
from metric_cases import SCENARIOS
from test_grid import REF_LOSS_MW, REF_VM

CHAIN_NAMES = ("baseline", "term", "slack", "ralc", "ralc,slack,term")


def _oracle_instances(n=60, seed=2024):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        gamma = 0.0 if i % 2 == 0 else float(rng.choice([0.5, 2.0, 8.0]))
        pf = PortfolioConfig(rho=float(rng.uniform(0, 5)), eta=float(rng.uniform(0, 30)),
                             phi=float(rng.uniform(0, 60)), gamma=gamma,
                             ramp_form="quadratic").with_flags(PORTFOLIOS[1 + i % 7])
        out.append(random_instance(rng, portfolio=pf))
    return out


@pytest.fixture(scope="module")
def oracle_runs():
    start = time.perf_counter()
    runs = []
    for inst in _oracle_instances():
        runs.append((inst, brute_force(inst), solve(inst, SolveOptions(backend="bb"))))
    return runs, time.perf_counter() - start


@pytest.fixture(scope="module")
def chain_results(study):
    return {n: solve(portfolio_instance(study, n), solve_options_for(study.config, n))
            for n in CHAIN_NAMES}


def _sweep_options(study, name):
    limits = {k: v for k, v in study.config.sweep.solver.model_dump().items() if v is not None}
    return replace(solve_options_for(study.config, name), **limits)


# ---------------------------------------------------------------- 1

@pytest.mark.slow
@pytest.mark.acceptance(1, title="branch and bound matches brute force")
def test_solver_exactness(oracle_runs, criterion):
    runs, elapsed = oracle_runs
    compared = 0
    for inst, ref, res in runs:
        if ref.status == "infeasible":
            assert res.status == "infeasible"
            continue
        assert res.status == "optimal"
        err = abs(res.objective - ref.objective)
        tol = 1e-6 + (res.pwl_bound_apriori if inst.portfolio.gamma > 0 else 0.0)
        assert err <= tol, (inst.portfolio.name, err, tol)
        compared += 1
    criterion.append(f"{compared} feasible of {len(runs)} instances, {elapsed:.1f} s")
    assert compared >= 50
    assert elapsed <= 300


# ---------------------------------------------------------------- 2

@pytest.mark.acceptance(2, title="power flow matches reference 14-bus solution")
def test_power_flow_golden(criterion):
    sol = ac_power_flow(bundled_case("case14"))
    dv = float(np.abs(sol.vm - REF_VM).max())
    dloss = abs(sol.losses_mw - REF_LOSS_MW) / REF_LOSS_MW
    criterion.append(f"max |dV| {dv:.1e} pu, loss error {100 * dloss:.3f}%, {sol.iterations} iterations")
    assert sol.converged and sol.iterations <= 10
    assert dv <= 1e-4 and dloss <= 1e-3


# ---------------------------------------------------------------- 3

@pytest.mark.slow
@pytest.mark.acceptance(3, title="portfolio ordering on the fixture")
def test_portfolio_nesting(chain_results, criterion):
    verdicts = {f"{a}<={b}": verify_order(chain_results[a], chain_results[b]) for a, b in ORDER_CHAIN}
    criterion.append(", ".join(f"{k} {v}" for k, v in verdicts.items()))
    assert all(v == "holds" for v in verdicts.values())


# ---------------------------------------------------------------- 4

@pytest.mark.slow
@pytest.mark.acceptance(4, title="solver breakdown equals independent re-evaluation")
def test_double_entry(oracle_runs, chain_results, study, criterion):
    runs, _ = oracle_runs
    plans = [(inst, res) for inst, _, res in runs if res.feasible]
    plans += [(portfolio_instance(study, n), r) for n, r in chain_results.items() if r.feasible]
    relaxed = portfolio_instance(study, "ralc,slack,term")
    plans.append((relaxed, solve(relaxed, SolveOptions(relax=True))))
    worst = 0.0
    for inst, res in plans:
        assert validate_schedule(res.plan, inst) == []
        pwl = econ.evaluate(res.plan, inst, ramp_eval="pwl").as_dict()
        for term, value in res.objective_breakdown.items():
            diff = abs(value - pwl[term])
            worst = max(worst, diff)
            assert diff <= 1e-6, (inst.portfolio.name, term, value, pwl[term])
        assert abs(res.objective - pwl["net"]) <= 1e-6
    criterion.append(f"{len(plans)} plans, worst term difference {worst:.1e}")


# ---------------------------------------------------------------- 5

@pytest.mark.acceptance(5, title="security metrics on hand-built scenarios")
def test_metric_scenarios(criterion):
    for name, sc in SCENARIOS.items():
        rep = security_metrics(sc["vm"], sc["flow"], sc["ratings"], v_min=0.94, v_max=1.06,
                               converged=sc.get("converged"))
        exp = sc["expect"]
        assert (rep.C_V, rep.C_C, rep.H_V) == (exp["C_V"], exp["C_C"], exp["H_V"]), name
        assert abs(rep.AVDI - exp["AVDI"]) <= 1e-12, name
        assert abs(rep.MVDI - exp["MVDI"]) <= 1e-12, name
    criterion.append(f"{len(SCENARIOS)} scenarios")
    assert len(SCENARIOS) == 10


# ---------------------------------------------------------------- 6

@pytest.mark.slow
@pytest.mark.acceptance(6, title="ramping charge sweep trend")
def test_gamma_sweep(study, criterion):
    name = study.config.sweep.portfolio
    inst = portfolio_instance(study, name)
    opts = _sweep_options(study, name)
    start = time.perf_counter()
    quad = sweep_coefficient(inst, "gamma", [0.0, 0.1, 1.0, 10.0], options=opts)
    lin_inst = inst.with_portfolio(replace(inst.portfolio, ramp_form="linear"))
    lin = sweep_coefficient(lin_inst, "gamma", [1.0], options=opts)
    elapsed = time.perf_counter() - start
    g = [p.sum_g for p in quad.points]
    dq, dl = quad.points[2].max_abs_dP, lin.points[0].max_abs_dP
    criterion.append("sum g " + " / ".join(f"{v:.4g}" for v in g)
                     + f"; max|dP| at gamma=1 quadratic {dq:.4g} vs linear {dl:.4g}; {elapsed:.0f} s")
    assert all(p.status in ("optimal", "gap_limit") for p in quad.points + lin.points)
    assert all(b <= a + 1e-6 for a, b in zip(g, g[1:]))
    assert dq < dl
    assert elapsed <= 600


# ---------------------------------------------------------------- 7

ETA_GRID = [0.0, 10.0, 25.0, 50.0, 100.0, 200.0]
PHI_GRID = [0.0, 15.0, 30.0, 60.0, 120.0, 240.0]


@pytest.mark.slow
@pytest.mark.acceptance(7, title="delay and termination thresholds")
@pytest.mark.parametrize("which,grid", [("eta", ETA_GRID), ("phi", PHI_GRID)])
def test_thresholds(study, which, grid, criterion):
    base = portfolio_instance(study, "ralc,slack,term")
    base = base.with_portfolio(replace(base.portfolio, gamma=0.0))
    opts = solve_options_for(study.config, "ralc,slack,term")
    key = TARGET[which]
    cache = {}

    def quantity(v):
        if v not in cache:
            inst = with_coefficient(base, which, v)
            res = solve(inst, opts)
            assert res.feasible
            cache[v] = plan_quantities(res.plan, inst)[key]
        return cache[v]

    star = find_threshold(quantity, grid, tol=1e-6, refine=4)
    criterion.append(f"{which}* = {star:.4g}" if star is not None else f"{which}* not found")
    assert star is not None and np.isfinite(star)
    assert quantity(grid[0]) > 1e-6          # the action is used when it is free
    assert all(quantity(v) <= 1e-6 for v in grid if v >= star)


# ---------------------------------------------------------------- 8

@pytest.mark.slow
@pytest.mark.acceptance(8, title="Monte Carlo reproducibility")
def test_monte_carlo_reproducible(study, tmp_path, criterion):
    sc = study.config.scenario
    mc = McConfig(trials=20, seed=sc.seed, sigma=sc.sigma, dimension=sc.dimension,
                  compare=tuple(sc.compare))
    setup = grid_setup(study)
    start = time.perf_counter()
    for tag in ("a", "b"):
        schedules = [solve(portfolio_instance(study, n), solve_options_for(study.config, n))
                     for n in mc.compare]
        res = run_monte_carlo(study.instance, setup, mc, schedules=schedules)
        res.write_csv(tmp_path / f"{tag}.csv")
        res.write_summary(tmp_path / f"{tag}.json")
    elapsed = time.perf_counter() - start
    same = all((tmp_path / f"a.{ext}").read_bytes() == (tmp_path / f"b.{ext}").read_bytes()
               for ext in ("csv", "json"))
    criterion.append(f"M=20, {res.trials_ok} trials ok, identical={same}, {elapsed:.0f} s for two runs")
    assert same
    assert elapsed / 2 <= 900


# ---------------------------------------------------------------- 9

@pytest.mark.acceptance(9, title="FCFS balance on identical sites")
def test_fcfs_balance(criterion):
    rng = np.random.default_rng(9)
    worst = 0
    for _ in range(200):
        jobs = []
        for k in range(int(rng.integers(1, 9))):
            release, length, xbar = int(rng.integers(0, 7)), int(rng.integers(1, 5)), int(rng.integers(1, 4))
            for twin in "ab":
                jobs.append(Job(f"j{k:02d}{twin}", release, release + length, float(xbar * length),
                                max_cpus_per_slot=xbar))
        T = max(j.end_slot for j in jobs)
        cpus = int(rng.integers(1, 7))
        sites = [make_site(f"s{k}", cpus=cpus) for k in range(2)]
        inst = make_instance(jobs, sites, T, portfolio="baseline")
        plan = fcfs_baseline(inst)
        assert validate_schedule(plan, inst) == []
        occ = plan.x.sum(axis=0)
        gap = int(np.abs(occ[0] - occ[1]).max())
        assert gap <= max(j.max_cpus_per_slot for j in jobs)
        worst = max(worst, gap)
    criterion.append(f"200 paired streams, largest occupancy gap {worst}")

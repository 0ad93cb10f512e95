import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from conftest import make_instance, make_site
from dcgrid import econ
from dcgrid.model import PORTFOLIOS, Job, PortfolioConfig, validate_schedule
from dcgrid.opt import simplex
from dcgrid.opt.oracle import OracleLimitError, brute_force, random_instance, search_space_size
from dcgrid.opt.program import build_program, export_lp
from dcgrid.opt.solve import SolveOptions, relaxation_value, solve

BB = SolveOptions(backend="bb")
HIGHS = SolveOptions(backend="highs")


# ---------------------------------------------------------------- program

def _tiny(portfolio, **coef):
    job = Job("j", 0, 3, 3.0, max_cpus_per_slot=1)
    return make_instance([job], [make_site(cpus=2)], 3, portfolio=portfolio, **coef)


@pytest.mark.parametrize("portfolio", ["none", "ralc", "term", "ralc,term"])
def test_variable_families(portfolio):
    counts = build_program(_tiny(portfolio)).family_counts()
    assert (counts["x"], counts["c"], counts["r"]) == (3, 3, 2)
    extra = set(counts) - {"x", "c", "r"}
    # fixed-path mode adds only the path encoding binaries
    assert extra == (set() if "ralc" in portfolio else {"u", "lev", "z", "y", "b"})


@pytest.mark.parametrize("portfolio,sense", [("none", "="), ("term", "<")])
def test_work_row_sense(portfolio, sense):
    prog = build_program(_tiny(portfolio))
    (row,) = prog.rows_for("work")
    assert prog.sense[row] == sense


@pytest.mark.parametrize("gamma,has_g", [(0.0, False), (1.0, True)])
def test_ramp_variables_elided_at_zero_gamma(gamma, has_g):
    prog = build_program(_tiny("ralc", gamma=gamma))
    assert ("g" in prog.family_counts()) is has_g
    prog.check()


def test_export_lp(tmp_path):
    prog = build_program(_tiny("ralc,term", gamma=1.0))
    export_lp(prog, tmp_path / "m.lp")
    text = (tmp_path / "m.lp").read_text()
    for section in ("Maximize", "Subject To", "Bounds", "General", "End"):
        assert section in text
    assert "work_0:" in text


# ---------------------------------------------------------------- simplex

@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_simplex_matches_linprog(seed):
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(2, 7)), int(rng.integers(1, 6))
    A = rng.integers(-3, 4, size=(m, n)).astype(float)
    sense = rng.choice(["<", ">", "="], size=m, p=[0.6, 0.25, 0.15])
    x0 = rng.uniform(0, 3, size=n)
    rhs = A @ x0 + np.where(sense == "<", 1.0, np.where(sense == ">", -1.0, 0.0))
    lb = np.zeros(n)
    ub = np.where(rng.random(n) < 0.5, np.inf, 5.0)
    c = rng.normal(size=n)
    ours = simplex.solve_lp(c, A, sense, rhs, lb, ub)
    le = np.vstack([A[sense == "<"], -A[sense == ">"]])
    ble = np.concatenate([rhs[sense == "<"], -rhs[sense == ">"]])
    ref = linprog(c, A_ub=le if le.size else None, b_ub=ble if le.size else None,
                  A_eq=A[sense == "="] if (sense == "=").any() else None,
                  b_eq=rhs[sense == "="] if (sense == "=").any() else None,
                  bounds=list(zip(lb, np.where(np.isinf(ub), None, ub))), method="highs")
    if ref.status == 3:
        assert ours.status == simplex.UNBOUNDED
        return
    assert ref.status == 0
    assert ours.status == simplex.OPTIMAL
    assert ours.objective == pytest.approx(ref.fun, abs=1e-7, rel=1e-9)


def test_simplex_detects_infeasibility():
    res = simplex.solve_lp([1.0], [[1.0]], ["<"], [-1.0], [0.0], [np.inf])
    assert res.status == simplex.INFEASIBLE


# ---------------------------------------------------------------- exactness

def test_empty_job_set_pays_idle_only():
    inst = make_instance([], [make_site()], 3, 5, ele=20.0, portfolio="ralc,slack,term")
    res = solve(inst, BB)
    assert res.status == "optimal"
    assert res.objective == pytest.approx(-20.0 * 1.3 * 60.0 * 3)
    assert res.plan.x.size == 0


def test_relaxation_bounds_integer_optimum():
    rng = np.random.default_rng(5)
    for _ in range(5):
        inst = random_instance(rng, portfolio=PortfolioConfig(phi=10).with_flags("ralc,term"),
                               limit=10 ** 5)
        prog = build_program(inst)
        res = solve(inst, BB)
        assert relaxation_value(prog) >= res.objective - 1e-7


def _cases(n, seed):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        name = PORTFOLIOS[1 + i % 7]
        gamma = (0.0, 0.0, 0.5, 2.0)[i % 4]
        form = "linear" if i % 8 == 6 else "quadratic"
        pf = PortfolioConfig(rho=float(rng.uniform(0, 5)), eta=float(rng.uniform(0, 30)),
                             phi=float(rng.uniform(0, 60)), gamma=gamma,
                             ramp_form=form).with_flags(name)
        out.append(random_instance(rng, portfolio=pf, limit=2 * 10 ** 5))
    return out


@pytest.mark.parametrize("inst", _cases(16, 11), ids=lambda i: i.portfolio.name)
def test_bb_and_highs_match_oracle(inst):
    ref = brute_force(inst)
    for opts in (BB, HIGHS):
        res = solve(inst, opts)
        if ref.status == "infeasible":
            assert res.status == "infeasible"
            continue
        assert res.status == "optimal"
        assert validate_schedule(res.plan, inst) == []
        assert abs(res.objective - ref.objective) <= 1e-6 * max(1, abs(ref.objective)) + res.pwl_bound_apriori


def test_oracle_enumerates_two_slot_grid():
    job = Job("j", 0, 2, 1.0, max_cpus_per_slot=1)
    inst = make_instance([job], [make_site(cpus=1, rate_lo=0.0, rate_hi=1.0)], 2,
                         portfolio="ralc,term", phi=1.0)
    assert search_space_size(inst) == 4
    assert brute_force(inst).nodes == 4


def test_oracle_refuses_large_space():
    jobs = [Job(f"j{k}", 0, 6, 1.0, max_cpus_per_slot=3) for k in range(4)]
    inst = make_instance(jobs, [make_site(), make_site("s1")], 6, portfolio="ralc,term")
    with pytest.raises(OracleLimitError, match="exceeds"):
        brute_force(inst)


def test_infeasible_completion_reported_with_certificate():
    job = Job("j", 0, 2, 50.0, max_cpus_per_slot=1)
    inst = make_instance([job], [make_site()], 2, portfolio="ralc")
    assert brute_force(inst).status == "infeasible"
    res = solve(inst, BB)
    assert res.status == "infeasible" and res.plan is None
    assert any(name.startswith("work_") for name in res.certificate)


# ---------------------------------------------------------------- properties

def test_breakdown_matches_econ_reevaluation():
    for inst in _cases(8, 23):
        res = solve(inst, BB)
        if not res.feasible:
            continue
        pwl = econ.evaluate(res.plan, inst, ramp_eval="pwl").as_dict()
        for term, value in res.objective_breakdown.items():
            assert value == pytest.approx(pwl[term], abs=1e-6, rel=1e-9), term


def test_solve_is_deterministic():
    inst = _cases(1, 99)[0]
    a, b = solve(inst, BB), solve(inst, BB)
    assert a.to_dict() == b.to_dict()
    assert np.array_equal(a.plan.x, b.plan.x) and np.array_equal(a.plan.c, b.plan.c)


@pytest.mark.parametrize("k", [0.5, 3.0])
def test_common_scaling_keeps_optimal_plan(k):
    for inst in _cases(4, 31):
        a = solve(inst, BB)
        b = solve(inst.scaled(k), BB)
        if not a.feasible:
            assert not b.feasible
            continue
        assert b.objective == pytest.approx(k * a.objective, rel=1e-7, abs=1e-6)
        # the scaled optimum re-evaluated on the original instance is still optimal
        assert econ.evaluate(b.plan, inst, ramp_eval="pwl").net == pytest.approx(a.objective, rel=1e-7, abs=1e-6)


def test_portfolio_nesting_on_small_instances():
    rng = np.random.default_rng(4)
    chain = [("term", "ralc,term"), ("slack", "ralc,slack"), ("none", "term"), ("none", "slack"),
             ("ralc", "ralc,slack,term"), ("slack", "slack,term")]
    for _ in range(6):
        base = random_instance(rng, portfolio=PortfolioConfig(eta=5.0, phi=40.0), limit=10 ** 5)
        val = {}
        for name in {n for pair in chain for n in pair}:
            res = solve(base.with_portfolio(name), BB)
            val[name] = res.objective if res.feasible else -math.inf
        for lo, hi in chain:
            assert val[lo] <= val[hi] + 1e-7


@pytest.mark.parametrize("inst", _cases(8, 7), ids=lambda i: i.portfolio.name)
def test_relaxed_mode_is_flagged_and_valid(inst):
    res = solve(inst, SolveOptions(relax=True))
    exact = solve(inst, HIGHS)
    assert res.exact is False
    if res.feasible:
        assert res.backend == "relaxed" and res.status == "gap_limit"
        assert validate_schedule(res.plan, inst) == []
        assert res.objective <= exact.objective + 1e-7 <= res.bound + 2e-7

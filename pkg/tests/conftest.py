import numpy as np
import pytest

from dcgrid.config import fixture_study
from dcgrid.model import Horizon, Job, PortfolioConfig, PriceTable, SchedulingInstance, Site


def make_site(id="s0", cpus=4, *, rate_lo=0.5, rate_hi=2.0, p_idle=60.0, p_busy=200.0,
              pue=1.3, delta=0.0, bus=None):
    return Site(id=id, cpu_capacity=cpus, rate_lo=rate_lo, rate_hi=rate_hi, p_idle_mw=p_idle,
                p_busy_mw=p_busy, pue=pue, ramp_tolerance_mw=delta, bus_id=bus)


def make_instance(jobs, sites, T0, T=None, *, ele=30.0, svc=50.0, portfolio="none", **coef):
    T = T0 if T is None else T
    horizon = Horizon(T0, T)
    prices = PriceTable.uniform(len(sites), T, ele, svc)
    if isinstance(ele, np.ndarray) or isinstance(svc, np.ndarray):
        prices = PriceTable(np.broadcast_to(ele, (len(sites), T)), np.broadcast_to(svc, (len(sites), T)))
    pf = PortfolioConfig(**coef).with_flags(portfolio)
    return SchedulingInstance(horizon, jobs, sites, prices, pf)


@pytest.fixture(scope="session")
def study():
    return fixture_study()


# ---------------------------------------------------------------- acceptance report

CRITERIA: dict[int, dict] = {}


@pytest.fixture
def criterion(request):
    """Details recorded by an acceptance test, printed in the terminal summary."""
    marker = request.node.get_closest_marker("acceptance")
    entry = CRITERIA.setdefault(marker.args[0], {"title": marker.kwargs.get("title", ""),
                                                 "details": [], "passed": None})
    return entry["details"]


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when != "call" and rep.passed:
        return
    entry = CRITERIA.setdefault(marker.args[0], {"title": marker.kwargs.get("title", ""),
                                                 "details": [], "passed": None})
    if rep.when == "call" or rep.failed:
        entry["passed"] = rep.passed and entry["passed"] is not False


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        e = CRITERIA[k]
        verdict = "PASS" if e["passed"] else "FAIL"
        detail = "; ".join(e["details"])
        terminalreporter.write_line(f"criterion {k} {verdict}: {e['title']}" + (f" ({detail})" if detail else ""))

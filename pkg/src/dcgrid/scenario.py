"""Background profiles, DC placement sampling, Monte Carlo studies and
coefficient sweeps.

The four daily templates are synthetic fixture data: 24 hourly factors,
peak-normalized to 1. Load templates are anchored at each bus's base
demand. The PV template is anchored at a configurable peak output (the
plant rating by default) and capped at the rating.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import econ
from .grid.case import PQ, NetworkCase
from .grid.metrics import SecurityReport, report_from_solutions
from .grid.powerflow import PFOptions
from .grid.timeseries import Profiles, build_timeseries_case, find_generator, run_power_flows
from .model import SchedulePlan, SchedulingInstance
from .opt.solve import SolveOptions, SolveResult, solve


@dataclass(frozen=True)
class ProfileTemplate:
    category: str
    shape: tuple[float, ...]

    def __post_init__(self):
        if len(self.shape) != 24:
            raise ValueError(f"template {self.category}: need 24 hourly factors")
        if min(self.shape) < 0 or max(self.shape) > 1:
            raise ValueError(f"template {self.category}: factors must lie in [0, 1]")


TEMPLATES = {
    "residential": ProfileTemplate("residential", (
        0.55, 0.50, 0.47, 0.45, 0.45, 0.50, 0.62, 0.75, 0.78, 0.72, 0.68, 0.66,
        0.65, 0.64, 0.65, 0.70, 0.80, 0.92, 1.00, 0.98, 0.92, 0.82, 0.70, 0.60)),
    "commercial": ProfileTemplate("commercial", (
        0.40, 0.38, 0.37, 0.37, 0.38, 0.42, 0.55, 0.72, 0.88, 0.96, 1.00, 1.00,
        0.98, 0.99, 1.00, 0.97, 0.90, 0.78, 0.65, 0.56, 0.50, 0.46, 0.43, 0.41)),
    "industrial": ProfileTemplate("industrial", (
        0.78, 0.77, 0.76, 0.76, 0.77, 0.80, 0.86, 0.93, 0.97, 1.00, 1.00, 0.99,
        0.97, 0.98, 0.99, 0.98, 0.95, 0.91, 0.87, 0.84, 0.82, 0.80, 0.79, 0.78)),
    "pv": ProfileTemplate("pv", (
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.02, 0.11, 0.31, 0.53, 0.74, 0.91,
        1.00, 0.98, 0.87, 0.69, 0.47, 0.22, 0.06, 0.0, 0.0, 0.0, 0.0, 0.0)),
}


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    """Independent stream for one trial, derived from (master seed, trial)."""
    return np.random.default_rng(np.random.SeedSequence([int(master_seed), int(trial)]))


def trial_seed(master_seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([int(master_seed), int(trial)]).generate_state(1)[0])


def _perturb(values: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma == 0:
        return values
    eps = np.maximum(rng.normal(0.0, sigma, size=values.shape), -1.0)
    return values * (1.0 + eps)


def realize_profiles(case: NetworkCase, T: int, *, categories: Mapping[int, str] | None = None,
                     default: str = "residential", sigma: float = 0.05,
                     rng: np.random.Generator | None = None, pv_gen: int | None = None,
                     pv_anchor_mw: float | None = None,
                     templates: Mapping[str, ProfileTemplate] = TEMPLATES) -> Profiles:
    """Per-bus load series and PV output: ``anchor * shape[t mod 24] * (1 + eps)``."""
    categories = categories or {}
    rng = rng if rng is not None else np.random.default_rng(0)
    hours = np.arange(T) % 24
    factors = np.empty((T, len(case.buses)))
    for n, bus in enumerate(case.buses):
        shape = np.asarray(templates[categories.get(bus.id, default)].shape)
        factors[:, n] = shape[hours]
    factors = _perturb(factors, sigma, rng)
    pd = np.array([b.pd for b in case.buses])
    qd = np.array([b.qd for b in case.buses])
    pv = None
    if pv_gen is not None:
        rating = case.gens[pv_gen].pmax
        anchor = rating if pv_anchor_mw is None else pv_anchor_mw
        base = anchor * np.asarray(templates["pv"].shape)[hours]
        pv = np.clip(_perturb(base, sigma, rng), 0.0, rating)
    return Profiles(factors * pd, factors * qd, pv)


def eligible_buses(case: NetworkCase) -> list[int]:
    """PQ buses with no generator attached."""
    gen_buses = {g.bus for g in case.gens}
    return [b.id for b in case.buses if b.type == PQ and b.id not in gen_buses]


def sample_placement(case: NetworkCase, site_ids: Sequence[str],
                     rng: np.random.Generator) -> dict[str, int]:
    """Uniform draw of distinct eligible buses for the sites."""
    pool = eligible_buses(case)
    n = len(site_ids)
    if n > len(pool):
        raise ValueError(f"{n} sites but only {len(pool)} eligible buses {pool}")
    if n == len(pool):
        chosen = pool
    else:
        chosen = [pool[i] for i in rng.choice(len(pool), size=n, replace=False)]
    return dict(zip(site_ids, (int(b) for b in chosen)))


@dataclass(frozen=True)
class GridSetup:
    """Everything needed to evaluate a power series on the network."""

    case: NetworkCase
    site_bus: Mapping[str, int]
    site_ids: tuple[str, ...]
    categories: Mapping[int, str] = field(default_factory=dict)
    default_category: str = "residential"
    pv_bus: int | None = None
    pv_anchor_mw: float | None = None
    v_min: float = 0.94
    v_max: float = 1.06
    pf: PFOptions = PFOptions()
    dt: float = 1.0

    @property
    def pv_gen(self) -> int | None:
        return None if self.pv_bus is None else find_generator(self.case, self.pv_bus)


def background_profiles(setup: GridSetup, T: int, sigma: float, seed: int) -> Profiles:
    """Deterministic-study background: one realization under ``seed``."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed)]))
    return realize_profiles(setup.case, T, categories=setup.categories,
                            default=setup.default_category, sigma=sigma, rng=rng,
                            pv_gen=setup.pv_gen, pv_anchor_mw=setup.pv_anchor_mw)


def evaluate_power(setup: GridSetup, P_mw: np.ndarray, profiles: Profiles,
                   site_bus: Mapping[str, int] | None = None,
                   workers: int = 1) -> tuple[SecurityReport, list]:
    """Run the per-slot power flows for one DC power series and score them."""
    from .grid.metrics import generation_cost

    snaps = build_timeseries_case(setup.case, P_mw, setup.site_ids, site_bus or setup.site_bus,
                                  profiles, pv_gen=setup.pv_gen)
    sols = run_power_flows(snaps, setup.pf, workers=workers)
    report = report_from_solutions(setup.case, sols, v_min=setup.v_min, v_max=setup.v_max)
    report.generation_cost = generation_cost(setup.case, sols, setup.dt)
    return report, sols


# ----------------------------------------------------------------- Monte Carlo

MC_METRICS = ("C_V", "H_V", "AVDI", "MVDI", "C_C")


@dataclass(frozen=True)
class McConfig:
    trials: int = 20
    seed: int = 0
    sigma: float = 0.05
    dimension: str = "placement"            # placement | background
    compare: tuple[str, str] = ("baseline", "ralc,slack,term")

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.dimension not in ("placement", "background"):
            raise ValueError("dimension must be 'placement' or 'background'")


@dataclass
class McResult:
    rows: list[tuple]                       # trial, seed, metric, baseline, variant, delta
    failures: list[tuple[int, str]]
    config: McConfig

    @property
    def trials_ok(self) -> int:
        return self.config.trials - len(self.failures)

    def summary(self) -> dict:
        out = {"trials_run": self.config.trials, "trials_ok": self.trials_ok,
               "trials_failed": len(self.failures),
               "failures": [{"trial": t, "reason": r} for t, r in self.failures], "metrics": {}}
        for metric in MC_METRICS:
            d = np.array([r[5] for r in self.rows if r[2] == metric], dtype=float)
            if d.size == 0:
                continue
            q = np.quantile(d, [0.05, 0.25, 0.5, 0.75, 0.95])
            out["metrics"][metric] = {
                "n": int(d.size), "mean": float(d.mean()),
                "q05": float(q[0]), "q25": float(q[1]), "median": float(q[2]),
                "q75": float(q[3]), "q95": float(q[4]),
                "share_positive": float((d > 0).mean()),
            }
        return out

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial", "seed", "metric", "baseline", "variant", "delta"])
            for row in self.rows:
                w.writerow([row[0], row[1], row[2], *(repr(float(v)) for v in row[3:])])

    def write_summary(self, path) -> None:
        Path(path).write_text(json.dumps(self.summary(), indent=2, sort_keys=True) + "\n")


def _mc_trial(args):
    trial, setup, series, mc = args
    rng = trial_rng(mc.seed, trial)
    site_bus = dict(setup.site_bus)
    if mc.dimension == "placement":
        site_bus = sample_placement(setup.case, setup.site_ids, rng)
    profiles = realize_profiles(setup.case, series[0].shape[1], categories=setup.categories,
                                default=setup.default_category, sigma=mc.sigma, rng=rng,
                                pv_gen=setup.pv_gen, pv_anchor_mw=setup.pv_anchor_mw)
    reports = []
    for P in series:
        rep, _ = evaluate_power(setup, P, profiles, site_bus)
        if rep.n_slots == 0:
            raise RuntimeError("no converged slots")
        reports.append(rep)
    return [(m, float(getattr(reports[0], m)), float(getattr(reports[1], m))) for m in MC_METRICS]


def run_monte_carlo(instance: SchedulingInstance, setup: GridSetup, mc: McConfig, *,
                    options: SolveOptions = SolveOptions(), workers: int = 1,
                    schedules: Sequence[SolveResult] | None = None) -> McResult:
    """Compare two portfolios over ``mc.trials`` randomized grid conditions.

    The schedules do not depend on trial randomness, so each portfolio is
    solved once and its power series reused in every trial.
    """
    if schedules is None:
        schedules = [solve(instance.with_portfolio(instance.portfolio.with_flags(name)), options)
                     for name in mc.compare]
    for res in schedules:
        if not res.feasible:
            raise RuntimeError(f"portfolio {res.portfolio} has no schedule ({res.status})")
    series = tuple(econ.power_series(r.plan, instance.sites)[1] for r in schedules)
    tasks = [(t, setup, series, mc) for t in range(mc.trials)]
    rows, failures = [], []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_mc_trial, task) for task in tasks]
            outcomes = []
            for fut in futures:
                try:
                    outcomes.append(fut.result())
                except Exception as exc:     # recorded per trial, study continues
                    outcomes.append(exc)
    else:
        outcomes = []
        for task in tasks:
            try:
                outcomes.append(_mc_trial(task))
            except Exception as exc:
                outcomes.append(exc)
    for t, out in enumerate(outcomes):
        if isinstance(out, Exception):
            failures.append((t, f"{type(out).__name__}: {out}"))
            continue
        seed = trial_seed(mc.seed, t)
        for metric, a, b in out:
            rows.append((t, seed, metric, a, b, b - a))
    return McResult(rows, failures, mc)


# ---------------------------------------------------------------------- sweeps

COEFFICIENTS = ("rho", "eta", "phi", "gamma")
SWEEP_COLUMNS = ("coef_value", "P_realloc", "P_delay", "P_term", "sum_g", "C_ramp", "objective")


@dataclass
class SweepPoint:
    value: float
    status: str
    objective: float = math.nan
    P_realloc: float = math.nan
    P_delay: float = math.nan
    P_term: float = math.nan
    C_ramp: float = math.nan
    sum_g: float = math.nan
    sum_r: float = math.nan
    delayed_work: float = math.nan
    unfinished_work: float = math.nan
    max_abs_dP: float = math.nan

    def row(self) -> list:
        return [self.value, self.P_realloc, self.P_delay, self.P_term, self.sum_g,
                self.C_ramp, self.objective]


@dataclass
class SweepResult:
    coefficient: str
    points: list[SweepPoint]
    reference_sum_g: float            # sum of g with no ramping charge

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for p in self.points:
                w.writerow([repr(float(v)) for v in p.row()])

    def summary(self) -> dict:
        return {"coefficient": self.coefficient, "reference_sum_g": self.reference_sum_g,
                "points": [{"coef_value": p.value, "status": p.status,
                            "sum_r": p.sum_r, "delayed_work": p.delayed_work,
                            "unfinished_work": p.unfinished_work,
                            "max_abs_dP": p.max_abs_dP} for p in self.points]}


def plan_quantities(plan: SchedulePlan, instance: SchedulingInstance) -> dict[str, float]:
    """Raw (unweighted) quantities each coefficient acts on."""
    L, P = econ.power_series(plan, instance.sites)
    delta = [s.ramp_tolerance_mw for s in instance.sites]
    g = econ.ramp_excess(P, delta)
    dP = np.abs(np.diff(P, axis=1))
    return {
        "sum_r": float(plan.r.sum()),
        "delayed_work": float(econ.delivered_in_delay(plan, instance).sum()),
        "unfinished_work": float(np.maximum(0.0, econ.unfinished_work(plan, instance)).sum()),
        "sum_g": float(g.sum()),
        "max_abs_dP": float(dP.max()) if dP.size else 0.0,
    }


def with_coefficient(instance: SchedulingInstance, which: str, value: float) -> SchedulingInstance:
    from dataclasses import replace

    if which not in COEFFICIENTS:
        raise ValueError(f"coefficient must be one of {COEFFICIENTS}")
    return instance.with_portfolio(replace(instance.portfolio, **{which: float(value)}))


def _sweep_point(args) -> SweepPoint:
    instance, which, value, options = args
    inst = with_coefficient(instance, which, value)
    try:
        res = solve(inst, options)
    except Exception as exc:
        return SweepPoint(value, f"error: {type(exc).__name__}: {exc}")
    if not res.feasible:
        return SweepPoint(value, res.status)
    q = plan_quantities(res.plan, inst)
    ev = res.evaluated
    return SweepPoint(value, res.status, objective=res.objective, P_realloc=ev["P_realloc"],
                      P_delay=ev["P_delay"], P_term=ev["P_term"], C_ramp=ev["C_ramp"], **q)


def sweep_coefficient(instance: SchedulingInstance, which: str, values: Sequence[float], *,
                      options: SolveOptions = SolveOptions(), workers: int = 1) -> SweepResult:
    """Re-optimize once per coefficient value."""
    values = [float(v) for v in values]
    if not values:
        raise ValueError("sweep grid is empty")
    if any(b < a for a, b in zip(values, values[1:])):
        raise ValueError("sweep grid must be nondecreasing")
    tasks = [(instance, which, v, options) for v in values]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(_sweep_point, tasks))
    else:
        points = [_sweep_point(t) for t in tasks]
    ref = next((p.sum_g for p in points if which == "gamma" and p.value == 0 and p.status != "infeasible"),
               None)
    if ref is None or (isinstance(ref, float) and math.isnan(ref)):
        ref = _sweep_point((instance, "gamma", 0.0, options)).sum_g
    return SweepResult(which, points, ref)


TARGET = {"rho": "sum_r", "eta": "delayed_work", "phi": "unfinished_work", "gamma": "sum_g"}


def find_threshold(quantity: Callable[[float], float], values: Sequence[float], *,
                   tol: float = 1e-9, refine: int = 8) -> float | None:
    """Smallest coefficient beyond which ``quantity`` stays at zero.

    The grid locates the first value from which every later grid point gives
    zero; bisection between it and the previous grid value then narrows the
    crossing. Returns None if the quantity never reaches zero on the grid.
    """
    vals = [float(v) for v in values]
    q = [quantity(v) for v in vals]
    k = None
    for i in range(len(vals)):
        if all(abs(x) <= tol for x in q[i:]):
            k = i
            break
    if k is None:
        return None
    if k == 0:
        return vals[0]
    lo, hi = vals[k - 1], vals[k]
    for _ in range(refine):
        mid = 0.5 * (lo + hi)
        if abs(quantity(mid)) <= tol:
            hi = mid
        else:
            lo = mid
    return hi

"""Command-line driver: ``dcgrid <command> [--config study.yaml] ...``.

Every run writes into ``<out>/<study>/<label or timestamp>/`` together with a
``manifest.json`` recording the config hash, seeds and package versions.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import math
import platform
import sys
import time
from dataclasses import dataclass, replace
from importlib import metadata
from pathlib import Path

import numpy as np

from . import econ
from .config import (ConfigError, Study, bundled_path, load_study, portfolio_from,
                     solve_options_for)
from .grid.case import CaseError
from .grid.metrics import MetricsError, SecurityReport
from .grid.powerflow import PFOptions
from .ingest import (IngestError, calibrate_work, flag_low_value, ingest_trace, read_plan,
                     write_jobs, write_plan, write_price_table)
from .model import PORTFOLIOS, Job, ModelError, parse_portfolio
from .opt.solve import SolveOptions, SolveResult, SolverError, solve
from .scenario import (TARGET, GridSetup, McConfig, background_profiles, evaluate_power,
                       find_threshold, plan_quantities, run_monte_carlo, sweep_coefficient,
                       with_coefficient)

logger = logging.getLogger("dcgrid")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_LIMIT, EXIT_GRID = 0, 2, 3, 4, 5

# (lower, upper): the optimum of ``lower`` must not exceed that of ``upper``
ORDER_CHAIN = (("baseline", "term"), ("baseline", "slack"), ("term", "ralc"),
               ("slack", "ralc"), ("ralc", "ralc,slack,term"))


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ------------------------------------------------------------------- helpers

def solve_options(study: Study, args, portfolio: str) -> SolveOptions:
    return solve_options_for(study.config, portfolio, backend=getattr(args, "backend", None),
                             gap_tol=getattr(args, "gap", None),
                             relax=True if getattr(args, "relax", False) else None)


def grid_setup(study: Study, args=None) -> GridSetup:
    g = study.config.grid
    v_min = g.v_min if args is None or args.vmin is None else args.vmin
    v_max = g.v_max if args is None or args.vmax is None else args.vmax
    if not v_min < v_max:
        raise ConfigError("--vmin must be below --vmax")
    t = study.config.scenario.templates
    return GridSetup(case=study.case, site_bus=study.site_bus, site_ids=tuple(study.site_ids),
                     categories=dict(t.buses), default_category=t.default, pv_bus=g.pv_bus,
                     pv_anchor_mw=g.pv_anchor_mw, v_min=v_min, v_max=v_max, pf=PFOptions(g.tol, g.max_iter),
                     dt=study.instance.horizon.dt)


def seed_of(study: Study, args) -> int:
    return study.config.scenario.seed if args.seed is None else args.seed


def portfolio_instance(study: Study, name: str):
    return study.instance.with_portfolio(portfolio_from(study.config, name))


def verify_order(lower: SolveResult, upper: SolveResult) -> str:
    """``holds`` if ``opt(lower) <= opt(upper)`` is proven by incumbent and bound,
    ``violated`` if the reverse is proven, else ``unverified``."""
    if not (lower.feasible and upper.feasible):
        return "unverified"
    if lower.bound <= upper.objective + 1e-9 * max(1.0, abs(upper.objective)):
        return "holds"
    if lower.objective > upper.bound + 1e-9 * max(1.0, abs(upper.bound)):
        return "violated"
    return "unverified"


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("dcgrid", "numpy", "scipy", "pydantic", "pyyaml"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


@dataclass
class RunDir:
    path: Path
    files: list[str]

    def file(self, name: str) -> Path:
        self.files.append(name)
        return self.path / name

    def write_json(self, name: str, data) -> Path:
        p = self.file(name)
        p.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        return p


def open_run(study: Study | None, args, study_name: str | None = None) -> RunDir:
    root = Path(args.out) if args.out else Path(study.config.output_dir if study else "out")
    name = study_name or (study.config.study if study else "study")
    label = args.label or time.strftime("%Y%m%d-%H%M%S")
    path = root / name / label
    path.mkdir(parents=True, exist_ok=True)
    return RunDir(path, [])


def write_manifest(run: RunDir, study: Study | None, args, seeds: dict) -> None:
    files = {}
    for name in sorted(set(run.files)):
        files[name] = hashlib.sha256((run.path / name).read_bytes()).hexdigest()
    options = {k: v for k, v in sorted(vars(args).items())
               if k not in ("out", "label", "config", "func", "threads")}
    manifest = {"command": args.command, "options": options, "seeds": seeds,
                "config_hash": study.config_hash if study else None,
                "study": study.config.study if study else None,
                "versions": _versions(), "files": files}
    (run.path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load(args) -> Study:
    return load_study(args.config or bundled_path("study.yaml"))


def _status_code(res: SolveResult) -> int:
    if res.status == "infeasible":
        return EXIT_INFEASIBLE
    if res.status in ("gap_limit", "node_limit") or not res.exact:
        return EXIT_LIMIT
    return EXIT_OK


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_timeline(path: Path, sols, report: SecurityReport, P: np.ndarray) -> None:
    """Per-slot convergence log and violation counts."""
    kept = iter(zip(report.voltage_counts, report.congestion_counts))
    rows = []
    for t, sol in enumerate(sols):
        nv, nc = next(kept) if sol.converged else (None, None)
        rows.append([t, int(sol.converged), sol.iterations, float(sol.max_mismatch),
                     float(sol.vm.min()), float(sol.vm.max()), nv, nc, float(P[:, t].sum())])
    _write_rows(path, ["slot", "converged", "iterations", "max_mismatch", "vm_min", "vm_max",
                       "voltage_violations", "congested_lines", "dc_mw"], rows)


def grid_report(study: Study, setup: GridSetup, P: np.ndarray, seed: int, workers: int):
    profiles = background_profiles(setup, study.instance.horizon.T,
                                   study.config.scenario.sigma, seed)
    try:
        report, sols = evaluate_power(setup, P, profiles, workers=workers)
    except MetricsError as exc:
        raise CliError(str(exc), EXIT_GRID) from None
    return report, sols


def _nonconverged_exceeds(study: Study, sols) -> bool:
    bad = sum(not s.converged for s in sols)
    return bad > study.config.grid.max_nonconverged_fraction * len(sols)


# ------------------------------------------------------------------ commands

def cmd_ingest(args) -> int:
    study = _load(args)
    run = open_run(study, args)
    horizon = study.instance.horizon
    if args.trace:
        rows = ingest_trace(args.trace, horizon, slack_slots=args.slack)
        jobs = [Job(r["job_id"], r["release_slot"], r["end_slot"],
                    calibrate_work(r["cpus"], r["end_slot"] - r["release_slot"], horizon.dt,
                                   study.config.work_rate),
                    slack_slots=r["slack_slots"], max_cpus_per_slot=r["cpus"],
                    svc_price_scale=r["svc_price_scale"]) for r in rows]
    else:
        jobs = list(study.instance.jobs)
    if args.low_value:
        jobs = flag_low_value(jobs, args.low_value, scale=args.low_scale, seed=seed_of(study, args))
    write_jobs(jobs, run.file("jobs.csv"))
    write_price_table(study.instance.prices, study.site_ids, run.file("prices.csv"))
    run.write_json("ingest.json", {"jobs": len(jobs), "sites": study.site_ids,
                                   "slots": horizon.T, "total_work": sum(j.total_work for j in jobs)})
    write_manifest(run, study, args, {"low_value": seed_of(study, args)})
    print(f"ingested {len(jobs)} jobs -> {run.path}")
    return EXIT_OK


def cmd_schedule(args) -> int:
    study = _load(args)
    name = args.portfolio or study.config.portfolio
    inst = portfolio_instance(study, name)
    res = solve(inst, solve_options(study, args, name))
    run = open_run(study, args)
    res.to_json(run.file("solve.json"))
    code = _status_code(res)
    if res.feasible:
        write_plan(res.plan, [j.id for j in inst.jobs], study.site_ids, run.file("plan.csv"))
        econ.evaluate(res.plan, inst).to_json(run.file("breakdown.json"))
        L, P = econ.power_series(res.plan, inst.sites)
        econ.write_power_series(L, P, study.site_ids, run.file("power.csv"))
    write_manifest(run, study, args, {})
    print(f"{res.portfolio}: {res.status} objective={res.objective:.6f} -> {run.path}")
    return code


def _power_for(study: Study, args) -> np.ndarray:
    T = study.instance.horizon.T
    if args.zero:
        return np.zeros((len(study.site_ids), T))
    if args.power:
        _, P = econ.read_power_series(args.power, study.site_ids)
    elif args.plan:
        plan = read_plan(args.plan, [j.id for j in study.instance.jobs], study.site_ids, T)
        _, P = econ.power_series(plan, study.instance.sites)
    else:
        name = args.portfolio or study.config.portfolio
        inst = portfolio_instance(study, name)
        res = solve(inst, solve_options(study, args, name))
        if not res.feasible:
            raise CliError(f"no schedule to evaluate ({res.status})", EXIT_INFEASIBLE)
        _, P = econ.power_series(res.plan, inst.sites)
    if P.shape[1] != T:
        raise CliError(f"power series has {P.shape[1]} slots, horizon has {T}", EXIT_CONFIG)
    return P


def cmd_evaluate(args) -> int:
    study = _load(args)
    setup = grid_setup(study, args)
    P = _power_for(study, args)
    seed = seed_of(study, args)
    report, sols = grid_report(study, setup, P, seed, args.threads)
    run = open_run(study, args)
    report.to_json(run.file("security.json"))
    report.write_violations(run.file("violations.csv"))
    write_timeline(run.file("timeline.csv"), sols, report, P)
    write_manifest(run, study, args, {"background": seed})
    print(f"C_V={report.C_V} C_C={report.C_C} H_V={report.H_V} AVDI={report.AVDI:.4f}% "
          f"MVDI={report.MVDI:.4f}% generation_cost={report.generation_cost:.2f} -> {run.path}")
    if _nonconverged_exceeds(study, sols):
        print(f"warning: {len(report.excluded_slots)} slots did not converge", file=sys.stderr)
        return EXIT_GRID
    return EXIT_OK


COMPARE_COLUMNS = ("portfolio", "status", "objective", "bound", "C_elec", "dC_elec_pct", "R", "dR",
                   "C_ramp", "P_realloc", "P_delay", "P_term", "C_V", "H_V", "AVDI", "MVDI", "C_C",
                   "generation_cost", "excluded_slots")


def cmd_compare(args) -> int:
    study = _load(args)
    names = args.portfolios.split(";") if args.portfolios else list(PORTFOLIOS)
    if "baseline" not in names:
        names = ["baseline", *names]
    for n in names:
        parse_portfolio(n)
    setup = None if args.no_grid else grid_setup(study, args)
    seed = seed_of(study, args)
    results, reports, errors = {}, {}, {}
    for n in names:
        try:
            results[n] = solve(portfolio_instance(study, n), solve_options(study, args, n))
        except (SolverError, ModelError) as exc:
            errors[n] = f"{type(exc).__name__}: {exc}"
            continue
        res = results[n]
        if setup is not None and res.feasible:
            _, P = econ.power_series(res.plan, study.instance.sites)
            try:
                reports[n], _ = grid_report(study, setup, P, seed, args.threads)
            except CliError as exc:
                errors[n] = str(exc)
    base = results.get("baseline")
    rows = []
    for n in names:
        res = results.get(n)
        if res is None or not res.feasible:
            rows.append([n, res.status if res else "error"] + [None] * (len(COMPARE_COLUMNS) - 2))
            continue
        ev = res.evaluated
        d_c = d_r = None
        if base is not None and base.feasible:
            b = base.evaluated
            d_c = 100.0 * (ev["C_elec"] - b["C_elec"]) / b["C_elec"] if b["C_elec"] else None
            d_r = ev["R"] - b["R"]
        rep = reports.get(n)
        grid = ([rep.C_V, rep.H_V, rep.AVDI, rep.MVDI, rep.C_C, rep.generation_cost,
                 len(rep.excluded_slots)] if rep else [None] * 7)
        rows.append([n, res.status, res.objective, res.bound, ev["C_elec"], d_c, ev["R"], d_r,
                     ev["C_ramp"], ev["P_realloc"], ev["P_delay"], ev["P_term"], *grid])
    run = open_run(study, args)
    _write_rows(run.file("compare.csv"), COMPARE_COLUMNS, rows)
    order = {f"{a} <= {b}": verify_order(results[a], results[b])
             for a, b in ORDER_CHAIN if a in results and b in results}
    run.write_json("compare_summary.json", {
        "portfolios": names, "errors": errors, "ordering": order,
        "results": {n: r.to_dict() for n, r in results.items()}})
    write_manifest(run, study, args, {"background": seed})
    for row in rows:
        print(f"{row[0]:18s} {row[1]:10s} objective={_fmt(row[2])}")
    if any(v == "violated" for v in order.values()):
        print("warning: portfolio ordering violated", file=sys.stderr)
    if errors or any(r.status == "infeasible" for r in results.values()):
        return EXIT_INFEASIBLE
    if any(r.status != "optimal" for r in results.values()):
        return EXIT_LIMIT
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    study = _load(args)
    sc = study.config.scenario
    mc = McConfig(trials=args.trials or sc.trials, seed=seed_of(study, args), sigma=sc.sigma,
                  dimension=args.dimension or sc.dimension, compare=tuple(sc.compare))
    setup = grid_setup(study, args)
    schedules = [solve(portfolio_instance(study, n), solve_options(study, args, n))
                 for n in mc.compare]
    result = run_monte_carlo(study.instance, setup, mc, workers=args.threads, schedules=schedules)
    run = open_run(study, args)
    result.write_csv(run.file("montecarlo.csv"))
    result.write_summary(run.file("montecarlo_summary.json"))
    write_manifest(run, study, args, {"master": mc.seed, "trials": mc.trials})
    print(f"{result.trials_ok}/{mc.trials} trials ok -> {run.path}")
    return EXIT_OK if result.trials_ok else EXIT_GRID


def cmd_sweep(args) -> int:
    study = _load(args)
    sw = study.config.sweep
    which = args.coefficient or sw.coefficient
    values = [float(v) for v in args.values.split(",")] if args.values else list(sw.values)
    name = args.portfolio or sw.portfolio
    inst = portfolio_instance(study, name)
    if args.ramp_form:
        inst = inst.with_portfolio(replace(inst.portfolio, ramp_form=args.ramp_form))
    opts = solve_options(study, args, name)
    limits = {k: v for k, v in sw.solver.model_dump().items() if v is not None}
    if args.gap is not None:
        limits.pop("gap_tol", None)
    opts = replace(opts, **limits)
    result = sweep_coefficient(inst, which, values, options=opts, workers=args.threads)
    summary = result.summary()
    if args.threshold:
        key = TARGET[which]
        cache = {p.value: getattr(p, key) for p in result.points}

        def quantity(v):
            if v not in cache:
                res = solve(with_coefficient(inst, which, v), opts)
                cache[v] = plan_quantities(res.plan, with_coefficient(inst, which, v))[key] \
                    if res.feasible else math.nan
            return cache[v]

        summary["threshold"] = {"quantity": key, "value": find_threshold(quantity, values)}
    run = open_run(study, args)
    result.write_csv(run.file("sweep.csv"))
    run.write_json("sweep_summary.json", summary)
    write_manifest(run, study, args, {})
    for p in result.points:
        print(f"{which}={p.value:<10g} {p.status:10s} sum_g={p.sum_g:.6g} objective={p.objective:.6f}")
    print(f"reference sum_g (no ramping charge) = {result.reference_sum_g:.6g}")
    failed = [p for p in result.points if p.status not in ("optimal", "gap_limit")]
    return EXIT_INFEASIBLE if failed else EXIT_OK


def _md_table(header, rows) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for r in rows:
        out.append("| " + " | ".join(_md_cell(v) for v in r) + " |")
    return out


def _md_cell(v) -> str:
    if v in (None, ""):
        return ""
    try:
        f = float(v)
    except (TypeError, ValueError):
        return str(v)
    return f"{int(f)}" if f.is_integer() and abs(f) < 1e15 else f"{f:.4g}"


def build_report(run_dir: Path) -> str:
    """Markdown digest of whatever study outputs ``run_dir`` contains."""
    lines = [f"# Study report: {run_dir.name}", ""]
    man = run_dir / "manifest.json"
    if man.is_file():
        m = json.loads(man.read_text())
        lines += [f"- command: `{m.get('command')}`", f"- study: {m.get('study')}",
                  f"- config hash: `{m.get('config_hash')}`", f"- seeds: {m.get('seeds')}", ""]
    solve_json = run_dir / "solve.json"
    if solve_json.is_file():
        s = json.loads(solve_json.read_text())
        lines += ["## Schedule", "", f"Portfolio `{s['portfolio']}`, status {s['status']}, "
                  f"objective {_md_cell(s['objective'])}.", ""]
        lines += _md_table(["term", "value"], sorted(s["evaluated"].items())) + [""]
    sec = run_dir / "security.json"
    if sec.is_file():
        r = json.loads(sec.read_text())
        lines += ["## Grid security", "", f"Voltage band ({r['v_min']}, {r['v_max']}) pu, "
                  f"{r['n_slots']} slots evaluated, excluded {r['excluded_slots']}.", ""]
        lines += _md_table(["C_V", "H_V", "AVDI %", "MVDI %", "C_C", "generation cost"],
                           [[r["C_V"], r["H_V"], r["AVDI"], r["MVDI"], r["C_C"], r["generation_cost"]]])
        lines.append("")
    for name, title in (("compare.csv", "Portfolio comparison"), ("sweep.csv", "Coefficient sweep")):
        p = run_dir / name
        if p.is_file():
            rows = list(csv.reader(p.open()))
            lines += [f"## {title}", ""] + _md_table(rows[0], rows[1:]) + [""]
    cs = run_dir / "compare_summary.json"
    if cs.is_file():
        order = json.loads(cs.read_text())["ordering"]
        lines += ["Ordering checks:", ""] + [f"- {k}: {v}" for k, v in order.items()] + [""]
    ss = run_dir / "sweep_summary.json"
    if ss.is_file():
        s = json.loads(ss.read_text())
        lines += [f"Reference sum of g with no ramping charge: {_md_cell(s['reference_sum_g'])}."]
        if "threshold" in s:
            lines.append(f"Threshold for {s['threshold']['quantity']}: {_md_cell(s['threshold']['value'])}.")
        lines.append("")
    mc = run_dir / "montecarlo_summary.json"
    if mc.is_file():
        s = json.loads(mc.read_text())
        lines += ["## Monte Carlo", "", f"{s['trials_ok']} of {s['trials_run']} trials ok, "
                  f"{s['trials_failed']} failed.", ""]
        rows = [[k, v["n"], v["mean"], v["q05"], v["median"], v["q95"], v["share_positive"]]
                for k, v in s["metrics"].items()]
        lines += _md_table(["metric", "n", "mean delta", "q05", "median", "q95", "share > 0"], rows)
        lines.append("")
    return "\n".join(lines).rstrip() + "\n"


def cmd_report(args) -> int:
    src = Path(args.run)
    if not src.is_dir():
        raise CliError(f"run directory not found: {src}", EXIT_CONFIG)
    (src / "report.md").write_text(build_report(src))
    print(f"report -> {src / 'report.md'}")
    return EXIT_OK


# -------------------------------------------------------------------- parser

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="study YAML (default: bundled fixture)")
    p.add_argument("--out", help="output root (default: config output_dir)")
    p.add_argument("--seed", type=int, help="master seed (default: scenario.seed)")
    p.add_argument("--threads", type=int, default=1, help="worker processes")
    p.add_argument("--label", help="run directory name (default: timestamp)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _solver_flags(p) -> None:
    p.add_argument("--relax", action="store_true", help="LP relaxation with repair (non-exact)")
    p.add_argument("--backend", choices=("auto", "bb", "highs"))
    p.add_argument("--gap", type=float, help="relative optimality gap")


def _grid_flags(p) -> None:
    p.add_argument("--vmin", type=float)
    p.add_argument("--vmax", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dcgrid", description="Multi-site data-center "
                                     "scheduling and grid-impact studies.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    p = sub.add_parser("ingest", parents=[common], help="normalize job and price inputs")
    p.add_argument("--trace", help="raw trace CSV job_id,submit_time_s,duration_s,cpus")
    p.add_argument("--slack", type=int, default=24, help="slack slots for traced jobs")
    p.add_argument("--low-value", type=int, default=0, help="jobs to flag as low value")
    p.add_argument("--low-scale", type=float, default=0.10)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("schedule", parents=[common], help="solve one portfolio")
    p.add_argument("--portfolio", help="e.g. baseline, ralc,slack,term")
    _solver_flags(p)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("evaluate", parents=[common], help="grid security of a power series")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--power", help="power series CSV from schedule")
    src.add_argument("--plan", help="plan CSV from schedule")
    src.add_argument("--zero", action="store_true", help="no DC load")
    p.add_argument("--portfolio", help="solve this portfolio when no series is given")
    _solver_flags(p)
    _grid_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", parents=[common], help="all portfolios side by side")
    p.add_argument("--portfolios", help="';'-separated list (default: all 8)")
    p.add_argument("--no-grid", action="store_true", help="skip the power-flow evaluation")
    _solver_flags(p)
    _grid_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("montecarlo", parents=[common], help="placement/background Monte Carlo")
    p.add_argument("--trials", type=int)
    p.add_argument("--dimension", choices=("placement", "background"))
    _solver_flags(p)
    _grid_flags(p)
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("sweep", parents=[common], help="re-optimize over a coefficient grid")
    p.add_argument("--coefficient", choices=("rho", "eta", "phi", "gamma"))
    p.add_argument("--values", help="comma-separated nondecreasing grid")
    p.add_argument("--portfolio")
    p.add_argument("--ramp-form", choices=("quadratic", "linear", "off"))
    p.add_argument("--threshold", action="store_true", help="bisect the zero-usage threshold")
    _solver_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", parents=[common], help="markdown digest of a run directory")
    p.add_argument("run", help="run directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, IngestError, CaseError, ModelError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LIMIT


if __name__ == "__main__":
    sys.exit(main())

import csv
import hashlib
import json
import shutil

import pytest

from dcgrid.cli import main
from dcgrid.config import bundled_path

INPUTS = ("study.yaml", "jobs.csv", "prices.csv", "service_prices.csv", "case14_dc.m")


@pytest.fixture
def study_dir(tmp_path):
    d = tmp_path / "study"
    d.mkdir()
    for name in INPUTS:
        shutil.copy(bundled_path(name), d / name)
    return d


def run(tmp_path, *argv, label="run"):
    code = main([*argv, "--out", str(tmp_path / "out"), "--label", label])
    return code, tmp_path / "out" / "fixture" / label


def test_baseline_schedule(tmp_path):
    code, out = run(tmp_path, "schedule", "--portfolio", "baseline")
    assert code == 0
    for name in ("solve.json", "plan.csv", "breakdown.json", "power.csv", "manifest.json"):
        assert (out / name).is_file()
    solve = json.loads((out / "solve.json").read_text())
    assert solve["backend"] == "fcfs" and solve["status"] == "optimal"


def test_manifest_hashes_outputs(tmp_path):
    _, out = run(tmp_path, "schedule", "--portfolio", "baseline")
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "schedule" and len(man["config_hash"]) == 64
    for name, digest in man["files"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest


def test_relaxed_schedule_reports_limit(tmp_path):
    code, out = run(tmp_path, "schedule", "--relax")
    assert code == 4
    assert json.loads((out / "solve.json").read_text())["exact"] is False


def test_missing_config_exit_code(tmp_path, capsys):
    assert main(["schedule", "--config", str(tmp_path / "none.yaml")]) == 2
    assert "none.yaml" in capsys.readouterr().err


def test_missing_jobs_file_exit_code(study_dir, tmp_path, capsys):
    (study_dir / "jobs.csv").unlink()
    code, _ = run(tmp_path, "schedule", "--config", str(study_dir / "study.yaml"))
    assert code == 2
    assert "jobs.csv" in capsys.readouterr().err


def test_infeasible_exit_code(study_dir, tmp_path):
    (study_dir / "jobs.csv").write_text(
        "job_id,release_slot,end_slot,cpus,slack_slots,svc_price_scale\nbig,0,2,400,0,1.0\n")
    code, out = run(tmp_path, "schedule", "--config", str(study_dir / "study.yaml"),
                    "--portfolio", "ralc")
    assert code == 3
    assert json.loads((out / "solve.json").read_text())["status"] == "infeasible"


def test_unknown_portfolio_is_config_error(tmp_path):
    code, _ = run(tmp_path, "schedule", "--portfolio", "ralc,nope")
    assert code == 2


def test_ingest_flags_low_value(tmp_path):
    code, out = run(tmp_path, "ingest", "--low-value", "5", "--seed", "3")
    assert code == 0

    def scales(path):
        with path.open() as fh:
            return [float(r["svc_price_scale"]) for r in csv.DictReader(fh)]

    before, after = scales(bundled_path("jobs.csv")), scales(out / "jobs.csv")
    assert len(after) == 30
    changed = [(a, b) for a, b in zip(before, after) if a != b]
    assert len(changed) == 5 and all(b == pytest.approx(0.1 * a) for a, b in changed)


def test_evaluate_zero_load(tmp_path):
    code, out = run(tmp_path, "evaluate", "--zero")
    assert code == 0
    sec = json.loads((out / "security.json").read_text())
    assert sec["n_slots"] == 48
    assert (out / "timeline.csv").read_text().count("\n") == 49


def test_evaluate_band_flags(tmp_path):
    _, wide = run(tmp_path, "evaluate", "--zero", "--vmin", "0.5", "--vmax", "1.5", label="wide")
    _, tight = run(tmp_path, "evaluate", "--zero", "--vmin", "1.0", "--vmax", "1.01", label="tight")
    assert json.loads((wide / "security.json").read_text())["C_V"] == 0
    assert json.loads((tight / "security.json").read_text())["C_V"] > 0


def test_evaluate_rejects_inverted_band(tmp_path):
    code, _ = run(tmp_path, "evaluate", "--zero", "--vmin", "1.1", "--vmax", "1.0")
    assert code == 2


def test_evaluate_power_file_round_trip(tmp_path):
    _, sched = run(tmp_path, "schedule", "--portfolio", "baseline", label="s")
    code, a = run(tmp_path, "evaluate", "--power", str(sched / "power.csv"), label="a")
    _, b = run(tmp_path, "evaluate", "--plan", str(sched / "plan.csv"), label="b")
    assert code == 0
    assert (a / "security.json").read_bytes() == (b / "security.json").read_bytes()


def test_gamma_sweep_rows(tmp_path):
    code, out = run(tmp_path, "sweep", "--portfolio", "baseline", "--values", "0,1")
    assert code == 0
    rows = (out / "sweep.csv").read_text().splitlines()
    assert rows[0] == "coef_value,P_realloc,P_delay,P_term,sum_g,C_ramp,objective"
    assert len(rows) == 3
    assert "reference_sum_g" in json.loads((out / "sweep_summary.json").read_text())


def test_sweep_rejects_bad_grid(tmp_path):
    code, _ = run(tmp_path, "sweep", "--values", "1,0")
    assert code == 2


def test_montecarlo_is_reproducible(tmp_path):
    code, a = run(tmp_path, "montecarlo", "--trials", "2", label="a")
    _, b = run(tmp_path, "montecarlo", "--trials", "2", label="b")
    assert code == 0
    for name in ("montecarlo.csv", "montecarlo_summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    summary = json.loads((a / "montecarlo_summary.json").read_text())
    assert summary["trials_run"] == summary["trials_ok"] + summary["trials_failed"] == 2


def test_report_is_markdown_only(tmp_path):
    _, src = run(tmp_path, "schedule", "--portfolio", "baseline", label="s")
    code, _ = run(tmp_path, "report", str(src), label="r")
    assert code == 0
    text = (src / "report.md").read_text()
    assert text.startswith("# Study report")
    assert "| C_elec |" in text
    assert not list(src.glob("*.png")) and not list(src.glob("*.svg"))


def test_report_missing_run_dir(tmp_path):
    code, _ = run(tmp_path, "report", str(tmp_path / "nothing"))
    assert code == 2

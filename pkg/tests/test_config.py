import shutil

import pytest
import yaml

from dcgrid.config import (ConfigError, bundled_path, config_hash, load_config, load_study,
                           parse_config, solve_options_for)


@pytest.fixture
def raw():
    return yaml.safe_load(bundled_path("study.yaml").read_text())


@pytest.fixture
def study_dir(tmp_path):
    for name in ("study.yaml", "jobs.csv", "prices.csv", "service_prices.csv", "case14_dc.m"):
        shutil.copy(bundled_path(name), tmp_path / name)
    return tmp_path


def test_fixture_study_loads(study):
    assert len(study.instance.jobs) == 30
    assert study.site_ids == ["HOUSTON", "NORTH", "SOUTH"]
    assert study.site_bus == {"HOUSTON": 5, "NORTH": 9, "SOUTH": 13}
    assert (study.instance.horizon.slot_count_original, study.instance.horizon.slot_count_total) == (24, 48)


def test_unknown_key_rejected(raw):
    raw["grid"]["vmin"] = 0.9
    with pytest.raises(ConfigError, match=r"grid\.vmin"):
        parse_config(raw)


@pytest.mark.parametrize("path,value,match", [
    (("coefficients", "rho"), -1.0, r"coefficients\.rho"),
    (("grid", "v_min"), 1.2, "v_min must be < v_max"),
    (("sweep", "values"), [1.0, 0.1], "nondecreasing"),
    (("portfolio",), "ralc,bogus", "portfolio"),
])
def test_invalid_values_name_the_key(raw, path, value, match):
    node = raw
    for key in path[:-1]:
        node = node[key]
    node[path[-1]] = value
    with pytest.raises(ConfigError, match=match):
        parse_config(raw)


def test_duplicate_site_ids(raw):
    raw["sites"][1]["id"] = raw["sites"][0]["id"]
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config(raw)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="nope.yaml"):
        load_config(tmp_path / "nope.yaml")


def test_missing_input_file_names_path(study_dir):
    (study_dir / "jobs.csv").unlink()
    with pytest.raises(ConfigError, match=r"paths\.jobs: file not found: .*jobs\.csv"):
        load_study(study_dir / "study.yaml")


def test_site_bus_must_exist(study_dir, raw):
    raw["sites"][0]["bus"] = 99
    (study_dir / "study.yaml").write_text(yaml.safe_dump(raw))
    with pytest.raises(ConfigError, match=r"sites\.HOUSTON\.bus"):
        load_study(study_dir / "study.yaml")


def test_pv_bus_needs_generator(study_dir, raw):
    raw["grid"]["pv_bus"] = 5
    (study_dir / "study.yaml").write_text(yaml.safe_dump(raw))
    with pytest.raises(ConfigError, match=r"grid\.pv_bus"):
        load_study(study_dir / "study.yaml")


def test_per_portfolio_overrides(raw):
    cfg = parse_config(raw)
    assert solve_options_for(cfg, "term").node_limit == 300
    assert solve_options_for(cfg, "slack,term").node_limit == 300
    assert solve_options_for(cfg, "ralc,slack,term").node_limit == 200_000
    assert solve_options_for(cfg, "term", node_limit=5).node_limit == 5


def test_override_keys_are_normalized(raw):
    raw["solver"]["overrides"] = {"term,slack": {"gap_tol": 0.5}}
    assert solve_options_for(parse_config(raw), "slack,term").gap_tol == 0.5


def test_pv_anchor_is_separate_from_rating(study):
    assert study.config.grid.pv_anchor_mw == 60.0
    pv = next(g for g in study.case.gens if g.bus == study.config.grid.pv_bus)
    assert pv.pmax == 480.0


def test_hash_tracks_content(raw):
    a = config_hash(parse_config(raw))
    assert a == config_hash(parse_config(raw))
    raw["scenario"]["seed"] += 1
    assert config_hash(parse_config(raw)) != a

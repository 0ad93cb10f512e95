"""Study configuration: a strict YAML schema and the loader that turns it
into model objects.

Relative paths resolve against the config file's directory. A path that
starts with ``bundled:`` names a file shipped in ``dcgrid/data``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .grid.case import NetworkCase, parse_case
from .ingest import ingest_jobs, load_price_table
from .model import Horizon, PortfolioConfig, SchedulingInstance, Site, parse_portfolio
from .opt.solve import SolveOptions


class ConfigError(ValueError):
    """Invalid or unreadable study configuration."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class HorizonCfg(_Strict):
    slots_original: int = Field(gt=0)
    slots_total: int = Field(gt=0)
    slot_hours: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _order(self):
        if self.slots_total < self.slots_original:
            raise ValueError("slots_total must be >= slots_original")
        return self


class PathsCfg(_Strict):
    jobs: str
    prices: str
    case: str
    service_prices: str | None = None


class SiteCfg(_Strict):
    id: str
    zone: str
    bus: int
    cpu_capacity: int = Field(gt=0)
    mva_rating: float = Field(260.0, gt=0)
    pue: float = Field(1.3, ge=1)
    idle_fraction: float = Field(0.3, ge=0, le=1)
    ramp_fraction: float = Field(0.1, ge=0)
    rate_lo: float = Field(0.5, ge=0)
    rate_hi: float = Field(2.0, gt=0)


class CoefficientsCfg(_Strict):
    rho: float = Field(0.0, ge=0)
    eta: float = Field(0.0, ge=0)
    phi: float = Field(0.0, ge=0)
    gamma: float = Field(0.0, ge=0)
    ramp_form: Literal["quadratic", "linear", "off"] = "quadratic"
    pwl_segments: int = Field(8, ge=1)


class SolverLimitsCfg(_Strict):
    gap_tol: float | None = Field(None, ge=0)
    time_limit: float | None = Field(None, gt=0)
    node_limit: int | None = Field(None, gt=0)


class SolverCfg(_Strict):
    backend: Literal["auto", "bb", "highs"] = "auto"
    gap_tol: float = Field(1e-9, ge=0)
    time_limit: float = Field(600.0, gt=0)
    node_limit: int = Field(200_000, gt=0)
    relax: bool = False
    # limits for individual portfolios, keyed by portfolio name
    overrides: dict[str, SolverLimitsCfg] = {}

    @field_validator("overrides")
    @classmethod
    def _names(cls, v):
        return {PortfolioConfig().with_flags(k).name: lim for k, lim in v.items()}

    def limits_for(self, portfolio: str) -> dict:
        base = {"gap_tol": self.gap_tol, "time_limit": self.time_limit, "node_limit": self.node_limit}
        name = PortfolioConfig().with_flags(portfolio).name
        if name in self.overrides:
            base.update({k: v for k, v in self.overrides[name].model_dump().items() if v is not None})
        return base


class GridCfg(_Strict):
    v_min: float = Field(0.94, gt=0)
    v_max: float = Field(1.06, gt=0)
    tol: float = Field(1e-8, gt=0)
    max_iter: int = Field(20, gt=0)
    pv_bus: int | None = None
    pv_anchor_mw: float | None = Field(None, ge=0)
    max_nonconverged_fraction: float = Field(0.0, ge=0, le=1)

    @model_validator(mode="after")
    def _band(self):
        if not self.v_min < self.v_max:
            raise ValueError("v_min must be < v_max")
        return self


class TemplatesCfg(_Strict):
    default: Literal["residential", "commercial", "industrial"] = "residential"
    buses: dict[int, Literal["residential", "commercial", "industrial"]] = {}


class ScenarioCfg(_Strict):
    templates: TemplatesCfg = TemplatesCfg()
    sigma: float = Field(0.05, ge=0)
    seed: int = 0
    trials: int = Field(20, ge=1)
    dimension: Literal["placement", "background"] = "placement"
    compare: tuple[str, str] = ("baseline", "ralc,slack,term")

    @field_validator("compare")
    @classmethod
    def _known(cls, v):
        for name in v:
            parse_portfolio(name)
        return v


class SweepCfg(_Strict):
    coefficient: Literal["rho", "eta", "phi", "gamma"] = "gamma"
    values: list[float] = [0.0, 0.1, 1.0, 10.0]
    portfolio: str = "ralc,slack,term"
    solver: SolverLimitsCfg = SolverLimitsCfg()

    @field_validator("values")
    @classmethod
    def _grid(cls, v):
        if not v:
            raise ValueError("sweep grid is empty")
        if any(b < a for a, b in zip(v, v[1:])):
            raise ValueError("sweep grid must be nondecreasing")
        if any(x < 0 for x in v):
            raise ValueError("sweep values must be >= 0")
        return v


class StudyConfig(_Strict):
    study: str = "study"
    horizon: HorizonCfg
    paths: PathsCfg
    sites: list[SiteCfg] = Field(min_length=1)
    work_rate: float = Field(1.0, gt=0)
    default_slack: int = Field(0, ge=0)
    service_price: float | None = None
    portfolio: str = "ralc,slack,term"
    coefficients: CoefficientsCfg = CoefficientsCfg()
    solver: SolverCfg = SolverCfg()
    grid: GridCfg = GridCfg()
    scenario: ScenarioCfg = ScenarioCfg()
    sweep: SweepCfg = SweepCfg()
    output_dir: str = "out"

    @field_validator("portfolio")
    @classmethod
    def _portfolio(cls, v):
        parse_portfolio(v)
        return v

    @model_validator(mode="after")
    def _unique_sites(self):
        ids = [s.id for s in self.sites]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate site ids")
        return self


def _format_errors(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("dcgrid.data").joinpath(name)))


def resolve_path(value: str, base: Path) -> Path:
    if value.startswith("bundled:"):
        return bundled_path(value[len("bundled:"):])
    p = Path(value)
    return p if p.is_absolute() else base / p


@dataclass
class Study:
    """A loaded configuration with every input read and validated."""

    config: StudyConfig
    base_dir: Path
    instance: SchedulingInstance
    case: NetworkCase
    site_bus: dict[str, int]
    config_hash: str

    @property
    def site_ids(self) -> list[str]:
        return [s.id for s in self.instance.sites]

    def path(self, key: str) -> Path | None:
        value = getattr(self.config.paths, key)
        return None if value is None else resolve_path(value, self.base_dir)


def portfolio_from(cfg: StudyConfig, name: str | None = None) -> PortfolioConfig:
    c = cfg.coefficients
    base = PortfolioConfig(rho=c.rho, eta=c.eta, phi=c.phi, gamma=c.gamma,
                           ramp_form=c.ramp_form, pwl_segments=c.pwl_segments)
    return base.with_flags(name or cfg.portfolio)


def sites_from(cfg: StudyConfig) -> list[Site]:
    return [Site.from_rating(s.id, s.cpu_capacity, s.mva_rating, pue=s.pue,
                             idle_fraction=s.idle_fraction, ramp_fraction=s.ramp_fraction,
                             rate_lo=s.rate_lo, rate_hi=s.rate_hi, bus_id=s.bus)
            for s in cfg.sites]


def parse_config(data: dict) -> StudyConfig:
    try:
        return StudyConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def solve_options_for(cfg: StudyConfig, portfolio: str, **flags) -> SolveOptions:
    """Solver options for one portfolio; non-None ``flags`` win over the config."""
    opts = {"backend": cfg.solver.backend, "relax": cfg.solver.relax,
            **cfg.solver.limits_for(portfolio)}
    opts.update({k: v for k, v in flags.items() if v is not None})
    return SolveOptions(**opts)


def config_hash(cfg: StudyConfig) -> str:
    blob = json.dumps(cfg.model_dump(mode="json"), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def load_config(path) -> tuple[StudyConfig, Path]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(data), path.resolve().parent


def build_study(cfg: StudyConfig, base_dir: Path) -> Study:
    """Read every input named by ``cfg``; missing files raise ConfigError."""
    paths = {k: getattr(cfg.paths, k) for k in ("jobs", "prices", "case", "service_prices")}
    resolved = {k: resolve_path(v, base_dir) for k, v in paths.items() if v is not None}
    for key, p in resolved.items():
        if not p.is_file():
            raise ConfigError(f"paths.{key}: file not found: {p}")
    h = cfg.horizon
    horizon = Horizon(h.slots_original, h.slots_total, h.slot_hours)
    sites = sites_from(cfg)
    site_ids = [s.id for s in sites]
    jobs = ingest_jobs(resolved["jobs"], horizon, work_rate=cfg.work_rate,
                       default_slack=cfg.default_slack)
    prices = load_price_table(resolved["prices"], {s.id: s.zone for s in cfg.sites}, site_ids,
                              horizon.T, service_path=resolved.get("service_prices"),
                              service_default=cfg.service_price)
    instance = SchedulingInstance(horizon, jobs, sites, prices, portfolio_from(cfg))
    case = parse_case(resolved["case"])
    buses = set(case.bus_ids)
    for s in cfg.sites:
        if s.bus not in buses:
            raise ConfigError(f"sites.{s.id}.bus: bus {s.bus} not in case {case.name}")
    if cfg.grid.pv_bus is not None and not any(g.bus == cfg.grid.pv_bus for g in case.gens):
        raise ConfigError(f"grid.pv_bus: no generator at bus {cfg.grid.pv_bus}")
    return Study(cfg, base_dir, instance, case, {s.id: s.bus for s in cfg.sites}, config_hash(cfg))


def load_study(path) -> Study:
    cfg, base = load_config(path)
    return build_study(cfg, base)


def fixture_study() -> Study:
    """The bundled synthetic desk study."""
    return load_study(bundled_path("study.yaml"))

"""Domain types for multi-site data-center scheduling.

All containers are frozen dataclasses; array fields are made read-only on
construction so instances can be shared between worker processes safely.
Slot indices are 0-based and windows are half-open ``[start, end)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


class ModelError(ValueError):
    """Raised when a domain object violates its construction invariants."""


class DimensionError(ValueError):
    """Raised when a plan's shape does not match its instance."""


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Horizon:
    slot_count_original: int
    slot_count_total: int
    slot_duration_hours: float = 1.0

    def __post_init__(self):
        if self.slot_count_original < 1:
            raise ModelError("horizon needs at least one original slot")
        if self.slot_count_total < self.slot_count_original:
            raise ModelError("slot_count_total must be >= slot_count_original")
        if not self.slot_duration_hours > 0:
            raise ModelError("slot_duration_hours must be positive")

    @property
    def dt(self) -> float:
        return self.slot_duration_hours

    @property
    def T(self) -> int:
        return self.slot_count_total


@dataclass(frozen=True)
class Job:
    id: str
    release_slot: int
    end_slot: int
    total_work: float
    slack_slots: int = 0
    max_cpus_per_slot: int = 1
    svc_price_scale: float = 1.0

    def __post_init__(self):
        if self.release_slot < 0:
            raise ModelError(f"job {self.id}: negative release slot")
        if self.end_slot <= self.release_slot:
            raise ModelError(f"job {self.id}: end_slot must exceed release_slot")
        if self.total_work < 0:
            raise ModelError(f"job {self.id}: total_work must be >= 0")
        if self.slack_slots < 0:
            raise ModelError(f"job {self.id}: slack_slots must be >= 0")
        if self.max_cpus_per_slot < 1:
            raise ModelError(f"job {self.id}: max_cpus_per_slot must be >= 1")

    @property
    def duration(self) -> int:
        return self.end_slot - self.release_slot

    def window(self, enable_slack: bool = True) -> range:
        stop = self.end_slot + (self.slack_slots if enable_slack else 0)
        return range(self.release_slot, stop)

    def delay_slots(self) -> range:
        """Post-deadline slots ``[end, end + slack)``."""
        return range(self.end_slot, self.end_slot + self.slack_slots)


@dataclass(frozen=True)
class Site:
    id: str
    cpu_capacity: int
    rate_lo: float
    rate_hi: float
    p_idle_mw: float
    p_busy_mw: float
    pue: float = 1.0
    ramp_tolerance_mw: float = 0.0
    bus_id: int | None = None

    def __post_init__(self):
        if self.cpu_capacity < 1:
            raise ModelError(f"site {self.id}: cpu_capacity must be >= 1")
        if not 0 <= self.rate_lo <= self.rate_hi:
            raise ModelError(f"site {self.id}: need 0 <= rate_lo <= rate_hi")
        if not 0 <= self.p_idle_mw <= self.p_busy_mw:
            raise ModelError(f"site {self.id}: need 0 <= p_idle_mw <= p_busy_mw")
        if self.pue < 1:
            raise ModelError(f"site {self.id}: pue must be >= 1")
        if self.ramp_tolerance_mw < 0:
            raise ModelError(f"site {self.id}: ramp tolerance must be >= 0")
        if not self.max_service > 0:
            raise ModelError(f"site {self.id}: max service capacity must be positive")

    @property
    def max_service(self) -> float:
        """Maximum effective service ``rate_hi * cpu_capacity``."""
        return self.rate_hi * self.cpu_capacity

    @property
    def mw_per_unit(self) -> float:
        """Facility MW drawn per unit of effective service above idle."""
        return self.pue * (self.p_busy_mw - self.p_idle_mw) / self.max_service

    @property
    def idle_facility_mw(self) -> float:
        return self.pue * self.p_idle_mw

    @property
    def peak_facility_mw(self) -> float:
        return self.pue * self.p_busy_mw

    @classmethod
    def from_rating(cls, id: str, cpu_capacity: int, mva_rating: float, *,
                    pue: float = 1.3, idle_fraction: float = 0.3,
                    ramp_fraction: float = 0.1, rate_lo: float = 0.5,
                    rate_hi: float = 2.0, bus_id: int | None = None) -> "Site":
        """Site with facility peak equal to its MVA rating at unity power factor."""
        p_busy = mva_rating / pue
        return cls(id=id, cpu_capacity=cpu_capacity, rate_lo=rate_lo,
                   rate_hi=rate_hi, p_idle_mw=idle_fraction * p_busy,
                   p_busy_mw=p_busy, pue=pue,
                   ramp_tolerance_mw=ramp_fraction * pue * p_busy, bus_id=bus_id)


@dataclass(frozen=True)
class PriceTable:
    """Electricity ($/MWh) and service ($/CPU-h) prices, shape ``(S, T)``."""

    electricity: np.ndarray
    service: np.ndarray

    def __post_init__(self):
        ele = _frozen(self.electricity)
        svc = _frozen(self.service)
        if ele.ndim != 2 or ele.shape != svc.shape:
            raise ModelError(f"price tables must share a 2-D shape, got {ele.shape} and {svc.shape}")
        if not (np.isfinite(ele).all() and np.isfinite(svc).all()):
            raise ModelError("prices must be finite")
        object.__setattr__(self, "electricity", ele)
        object.__setattr__(self, "service", svc)

    @classmethod
    def uniform(cls, n_sites: int, n_slots: int, electricity: float, service: float) -> "PriceTable":
        return cls(np.full((n_sites, n_slots), float(electricity)),
                   np.full((n_sites, n_slots), float(service)))

    def scaled(self, k: float) -> "PriceTable":
        return PriceTable(self.electricity * k, self.service * k)


RAMP_FORMS = ("quadratic", "linear", "off")


@dataclass(frozen=True)
class PortfolioConfig:
    enable_slack: bool = False
    enable_realloc: bool = False
    enable_termination: bool = False
    rho: float = 0.0
    eta: float = 0.0
    phi: float = 0.0
    gamma: float = 0.0
    ramp_form: str = "quadratic"
    pwl_segments: int = 8
    fcfs: bool = False

    def __post_init__(self):
        for name in ("rho", "eta", "phi", "gamma"):
            if getattr(self, name) < 0:
                raise ModelError(f"coefficient {name} must be >= 0")
        if self.ramp_form not in RAMP_FORMS:
            raise ModelError(f"ramp_form must be one of {RAMP_FORMS}")
        if self.pwl_segments < 1:
            raise ModelError("pwl_segments must be >= 1")

    @property
    def name(self) -> str:
        if self.fcfs:
            return "baseline"
        parts = [flag for flag, on in (("ralc", self.enable_realloc),
                                       ("slack", self.enable_slack),
                                       ("term", self.enable_termination)) if on]
        return ",".join(parts) if parts else "none"

    @property
    def ramp_active(self) -> bool:
        return self.gamma > 0 and self.ramp_form != "off"

    def with_flags(self, name: str) -> "PortfolioConfig":
        """Copy with the switches of a named portfolio (``"baseline"``, ``"ralc,slack"``...)."""
        return replace(self, **parse_portfolio(name))

    def scaled(self, k: float) -> "PortfolioConfig":
        return replace(self, rho=self.rho * k, eta=self.eta * k,
                       phi=self.phi * k, gamma=self.gamma * k)


_FLAG_ALIASES = {
    "ralc": "enable_realloc", "realloc": "enable_realloc",
    "slack": "enable_slack",
    "term": "enable_termination", "termination": "enable_termination",
}

# Row order of the portfolio comparison table.
PORTFOLIOS = (
    "baseline", "term", "slack", "ralc", "ralc,term", "ralc,slack",
    "slack,term", "ralc,slack,term",
)


def parse_portfolio(name: str) -> dict:
    """Map a portfolio string to PortfolioConfig switch values."""
    name = name.strip().lower().replace("+", ",").replace(".", "")
    flags = dict(enable_slack=False, enable_realloc=False,
                 enable_termination=False, fcfs=False)
    if name == "baseline":
        flags["fcfs"] = True
        return flags
    if name in ("", "none"):
        return flags
    for part in name.split(","):
        key = _FLAG_ALIASES.get(part.strip())
        if key is None:
            raise ModelError(f"unknown portfolio flag {part!r}")
        flags[key] = True
    return flags


@dataclass(frozen=True)
class SchedulingInstance:
    horizon: Horizon
    jobs: tuple[Job, ...]
    sites: tuple[Site, ...]
    prices: PriceTable
    portfolio: PortfolioConfig = field(default_factory=PortfolioConfig)

    def __post_init__(self):
        object.__setattr__(self, "jobs", tuple(self.jobs))
        object.__setattr__(self, "sites", tuple(self.sites))
        if not self.sites:
            raise ModelError("instance needs at least one site")
        T = self.horizon.T
        for job in self.jobs:
            if job.end_slot + job.slack_slots > T:
                raise ModelError(f"job {job.id}: window plus slack exceeds the horizon ({T} slots)")
        if self.prices.electricity.shape != (len(self.sites), T):
            raise ModelError(f"price table shape {self.prices.electricity.shape} does not "
                             f"match (sites, slots) = {(len(self.sites), T)}")
        ids = [j.id for j in self.jobs]
        if len(set(ids)) != len(ids):
            raise ModelError("job ids must be unique")

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.jobs), len(self.sites), self.horizon.T

    def with_portfolio(self, portfolio: PortfolioConfig | str) -> "SchedulingInstance":
        if isinstance(portfolio, str):
            portfolio = self.portfolio.with_flags(portfolio)
        return replace(self, portfolio=portfolio)

    def scaled(self, k: float) -> "SchedulingInstance":
        """Prices and penalty coefficients multiplied by ``k``."""
        return replace(self, prices=self.prices.scaled(k), portfolio=self.portfolio.scaled(k))


def admissible_window(job: Job, horizon: Horizon, enable_slack: bool) -> np.ndarray:
    """0/1 indicator over the horizon marking slots where ``job`` may run."""
    a = np.zeros(horizon.T, dtype=np.int8)
    w = job.window(enable_slack)
    a[w.start:w.stop] = 1
    return a


def admissibility(instance: SchedulingInstance) -> np.ndarray:
    """Boolean ``(J, T)`` mask of admissible slots under the instance portfolio."""
    slack = instance.portfolio.enable_slack
    J, _, T = instance.shape
    mask = np.zeros((J, T), dtype=bool)
    for j, job in enumerate(instance.jobs):
        w = job.window(slack)
        mask[j, w.start:w.stop] = True
    return mask


@dataclass(frozen=True)
class SchedulePlan:
    """Integer CPU allocation ``x`` and delivered service ``c``, both ``(J, S, T)``."""

    x: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x)
        if x.size and not np.all(np.equal(np.mod(x, 1), 0)):
            raise ModelError("CPU allocations must be integral")
        x = _frozen(x, dtype=np.int64)
        c = _frozen(self.c)
        if x.shape != c.shape or x.ndim != 3:
            raise ModelError(f"x and c must share a 3-D shape, got {x.shape} and {c.shape}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "c", c)

    @classmethod
    def zeros(cls, shape: Sequence[int]) -> "SchedulePlan":
        return cls(np.zeros(shape, dtype=np.int64), np.zeros(shape))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.x.shape

    @property
    def r(self) -> np.ndarray:
        """Allocation changes ``|x[t] - x[t-1]|`` for ``t >= 1``; slot 0 is zero."""
        r = np.zeros(self.x.shape, dtype=np.int64)
        r[:, :, 1:] = np.abs(np.diff(self.x, axis=2))
        return r

    def delivered(self, dt: float) -> np.ndarray:
        """Per-job delivered work ``sum_{s,t} c * dt``."""
        return self.c.sum(axis=(1, 2)) * dt


@dataclass(frozen=True)
class Violation:
    constraint: str
    index: tuple
    message: str

    def __str__(self):
        return f"[{self.constraint}] {self.index}: {self.message}"


def _tol(scale) -> float:
    return 1e-6 * max(1.0, abs(float(scale)))


def validate_schedule(plan: SchedulePlan, instance: SchedulingInstance) -> list[Violation]:
    """List every hard-constraint violation of ``plan``; empty means feasible.

    Checks the admissible window, rate bracket, work budget (equality when
    termination is disabled and the plan is not a queue baseline), site capacity, sign/integrality, and the fixed-path
    restriction when reallocation is disabled.

    Raises DimensionError when the plan shape does not match the instance.
    """
    if plan.shape != instance.shape:
        raise DimensionError(f"plan shape {plan.shape} != instance shape {instance.shape}")
    pf = instance.portfolio
    dt = instance.horizon.dt
    x, c = plan.x, plan.c
    out: list[Violation] = []

    for idx in zip(*np.nonzero(x < 0)):
        out.append(Violation("nonneg_cpu", tuple(int(i) for i in idx), "negative CPU allocation"))
    for idx in zip(*np.nonzero(c < -1e-9)):
        out.append(Violation("nonneg_service", tuple(int(i) for i in idx), "negative delivered service"))

    # Queue baseline never uses slack; optimized portfolios follow their switch.
    slack = pf.enable_slack and not pf.fcfs
    for j, job in enumerate(instance.jobs):
        a = admissible_window(job, instance.horizon, slack).astype(bool)
        cap = job.max_cpus_per_slot * a
        for s, t in zip(*np.nonzero(x[j] > cap[None, :])):
            out.append(Violation("window", (j, int(s), int(t)),
                                 f"x={x[j, s, t]} exceeds {cap[t]} (window/cap)"))

    for s, site in enumerate(instance.sites):
        lo = site.rate_lo * x[:, s, :]
        hi = site.rate_hi * x[:, s, :]
        for j, t in zip(*np.nonzero(c[:, s, :] > hi + 1e-7 * np.maximum(1, hi))):
            out.append(Violation("rate", (int(j), s, int(t)),
                                 f"c={c[j, s, t]:.6g} above rate_hi*x={hi[j, t]:.6g}"))
        for j, t in zip(*np.nonzero(c[:, s, :] < lo - 1e-7 * np.maximum(1, lo))):
            out.append(Violation("rate", (int(j), s, int(t)),
                                 f"c={c[j, s, t]:.6g} below rate_lo*x={lo[j, t]:.6g}"))
        load = x[:, s, :].sum(axis=0)
        for t in np.nonzero(load > site.cpu_capacity)[0]:
            out.append(Violation("capacity", (s, int(t)),
                                 f"{load[t]} CPUs allocated, capacity {site.cpu_capacity}"))

    delivered = plan.delivered(dt)
    must_complete = not pf.enable_termination and not pf.fcfs
    for j, job in enumerate(instance.jobs):
        gap = delivered[j] - job.total_work
        if gap > _tol(job.total_work):
            out.append(Violation("work", (j,), f"delivered {delivered[j]:.6g} > W={job.total_work:.6g}"))
        elif must_complete and gap < -_tol(job.total_work):
            out.append(Violation("work", (j,), f"delivered {delivered[j]:.6g} < W={job.total_work:.6g} "
                                              "with termination disabled"))

    if not pf.enable_realloc and not pf.fcfs:
        for j in range(len(instance.jobs)):
            msg = fixed_path_defect(x[j])
            if msg:
                out.append(Violation("fixed_path", (j,), msg))
    return out


def fixed_path_defect(xj: np.ndarray) -> str | None:
    """Why a ``(S, T)`` allocation is not one site, one contiguous run, one level."""
    sites, slots = np.nonzero(xj)
    if sites.size == 0:
        return None
    if np.unique(sites).size > 1:
        return "served at more than one site"
    row = xj[sites[0]]
    if slots[-1] - slots[0] + 1 != slots.size:
        return "service run is not contiguous"
    if np.unique(row[slots]).size > 1:
        return "CPU level changes during the run"
    return None

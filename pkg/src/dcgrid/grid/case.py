"""Network case model and a reader for MATPOWER-style ``.m`` case files.

Only the tables needed for AC power flow and generation cost are read:
``baseMVA``, ``bus``, ``gen``, ``branch`` and (optionally) ``gencost``,
using MATPOWER column order:

* bus: ``bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin``
* gen: ``bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin ...``
* branch: ``fbus tbus r x b rateA rateB rateC ratio angle status ...``
* gencost: ``model startup shutdown n c(n-1) ... c0`` (model 2) or
  ``model startup shutdown n x1 y1 ... xn yn`` (model 1)

Bus types are 1 (PQ), 2 (PV), 3 (slack) and 4 (isolated). A branch rating
of 0 means unlimited.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.sparse import csgraph, csr_matrix

PQ, PV, SLACK, ISOLATED = 1, 2, 3, 4
BUS_TYPE_NAMES = {PQ: "PQ", PV: "PV", SLACK: "slack", ISOLATED: "isolated"}


class CaseError(ValueError):
    """Malformed or physically invalid network case."""


@dataclass(frozen=True)
class Bus:
    id: int
    type: int
    pd: float
    qd: float
    gs: float = 0.0
    bs: float = 0.0
    vm: float = 1.0
    va_deg: float = 0.0
    base_kv: float = 0.0
    vmax: float = 1.06
    vmin: float = 0.94


@dataclass(frozen=True)
class Branch:
    f: int
    t: int
    r: float
    x: float
    b: float = 0.0
    rate_mva: float = 0.0
    tap: float = 0.0
    shift_deg: float = 0.0
    in_service: bool = True

    @property
    def ratio(self) -> float:
        return self.tap if self.tap != 0 else 1.0


@dataclass(frozen=True)
class GenCost:
    model: int                      # 1 piecewise linear, 2 polynomial
    coeffs: tuple[float, ...]       # polynomial high order first, or x1 y1 x2 y2 ...

    def __call__(self, p_mw) -> np.ndarray:
        p = np.asarray(p_mw, dtype=float)
        if self.model == 2:
            return np.polyval(self.coeffs, p) if self.coeffs else np.zeros_like(p)
        xs = np.asarray(self.coeffs[0::2])
        ys = np.asarray(self.coeffs[1::2])
        slope_lo = (ys[1] - ys[0]) / (xs[1] - xs[0])
        slope_hi = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
        out = np.interp(p, xs, ys)
        out = np.where(p < xs[0], ys[0] + slope_lo * (p - xs[0]), out)
        return np.where(p > xs[-1], ys[-1] + slope_hi * (p - xs[-1]), out)


@dataclass(frozen=True)
class Generator:
    bus: int
    pg: float
    qg: float
    qmax: float
    qmin: float
    vg: float
    pmax: float
    pmin: float = 0.0
    in_service: bool = True
    cost: GenCost | None = None


@dataclass(frozen=True)
class NetworkCase:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    gens: tuple[Generator, ...]
    name: str = "case"
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @property
    def slack_bus(self) -> int:
        return next(b.id for b in self.buses if b.type == SLACK)

    def with_loads(self, pd, qd) -> "NetworkCase":
        buses = tuple(replace(b, pd=float(p), qd=float(q)) for b, p, q in zip(self.buses, pd, qd))
        return replace(self, buses=buses)

    def with_gen_output(self, index: int, pg: float) -> "NetworkCase":
        gens = list(self.gens)
        gens[index] = replace(gens[index], pg=float(pg))
        return replace(self, gens=tuple(gens))

    def validate(self) -> "NetworkCase":
        ids = self.bus_ids
        if len(set(ids)) != len(ids):
            raise CaseError("duplicate bus ids")
        slack = [b.id for b in self.buses if b.type == SLACK]
        if len(slack) != 1:
            raise CaseError(f"need exactly one slack bus, found {len(slack)}: {slack}")
        pos = self.bus_index()
        for br in self.branches:
            for end in (br.f, br.t):
                if end not in pos:
                    raise CaseError(f"branch {br.f}-{br.t} references unknown bus {end}")
            if br.rate_mva < 0:
                raise CaseError(f"branch {br.f}-{br.t} has negative rating {br.rate_mva}")
            if br.in_service and br.r == 0 and br.x == 0:
                raise CaseError(f"branch {br.f}-{br.t} has zero impedance")
        for g in self.gens:
            if g.bus not in pos:
                raise CaseError(f"generator at unknown bus {g.bus}")
        for b in self.buses:
            if b.type not in BUS_TYPE_NAMES:
                raise CaseError(f"bus {b.id} has unknown type {b.type}")
            if b.type == PV and not any(g.bus == b.id and g.in_service for g in self.gens):
                raise CaseError(f"PV bus {b.id} has no in-service generator")
        active = [i for i, b in enumerate(self.buses) if b.type != ISOLATED]
        rows = [pos[br.f] for br in self.branches if br.in_service]
        cols = [pos[br.t] for br in self.branches if br.in_service]
        n = len(self.buses)
        adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        _, labels = csgraph.connected_components(adj, directed=False)
        root = labels[pos[slack[0]]]
        cut = [self.buses[i].id for i in active if labels[i] != root]
        if cut:
            raise CaseError(f"bus(es) {cut} not connected to the slack bus")
        return self


_TABLE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;", re.S)
_SCALAR = re.compile(r"mpc\.(\w+)\s*=\s*([-+0-9.eE]+)\s*;")


def _rows(body: str) -> list[list[float]]:
    out = []
    for line in body.replace(";", "\n").splitlines():
        line = line.split("%", 1)[0].strip()
        if not line:
            continue
        out.append([float(v) for v in line.replace(",", " ").split()])
    return out


def parse_case_text(text: str, name: str = "case") -> NetworkCase:
    text = "\n".join(line.split("%", 1)[0] for line in text.splitlines())
    scalars = {k: float(v) for k, v in _SCALAR.findall(text)}
    tables = {k: _rows(v) for k, v in _TABLE.findall(text)}
    for key in ("bus", "gen", "branch"):
        if key not in tables:
            raise CaseError(f"{name}: missing mpc.{key} table")
    if "baseMVA" not in scalars:
        raise CaseError(f"{name}: missing mpc.baseMVA")
    try:
        buses = tuple(Bus(id=int(r[0]), type=int(r[1]), pd=r[2], qd=r[3], gs=r[4], bs=r[5],
                          vm=r[7], va_deg=r[8], base_kv=r[9], vmax=r[11], vmin=r[12])
                      for r in tables["bus"])
        branches = tuple(Branch(f=int(r[0]), t=int(r[1]), r=r[2], x=r[3], b=r[4], rate_mva=r[5],
                                tap=r[8], shift_deg=r[9], in_service=bool(r[10]))
                         for r in tables["branch"])
        costs = [GenCost(int(r[0]), tuple(r[4:4 + (int(r[3]) if int(r[0]) == 2 else 2 * int(r[3]))]))
                 for r in tables.get("gencost", [])]
        gens = tuple(Generator(bus=int(r[0]), pg=r[1], qg=r[2], qmax=r[3], qmin=r[4], vg=r[5],
                               pmax=r[8], pmin=r[9], in_service=bool(r[7]),
                               cost=costs[i] if i < len(costs) else None)
                     for i, r in enumerate(tables["gen"]))
    except IndexError:
        raise CaseError(f"{name}: table row has too few columns") from None
    return NetworkCase(scalars["baseMVA"], buses, branches, gens, name=name).validate()


def parse_case(path) -> NetworkCase:
    path = Path(path)
    return parse_case_text(path.read_text(), name=path.stem)


def bundled_case(name: str = "case14") -> NetworkCase:
    """Load a case shipped with the package (``case14`` or ``case14_dc``)."""
    text = resources.files("dcgrid.data").joinpath(f"{name}.m").read_text()
    return parse_case_text(text, name=name)


def _fmt(v: float) -> str:
    return repr(float(v)) if v != int(v) else str(int(v))


def write_case(case: NetworkCase, path) -> None:
    """Write ``case`` in the same ``.m`` subset that parse_case reads."""
    lines = [f"function mpc = {case.name}", "mpc.version = '2';", f"mpc.baseMVA = {_fmt(case.base_mva)};",
             "", "%% bus_i type Pd Qd Gs Bs area Vm Va baseKV zone Vmax Vmin", "mpc.bus = ["]
    for b in case.buses:
        vals = [b.id, b.type, b.pd, b.qd, b.gs, b.bs, 1, b.vm, b.va_deg, b.base_kv, 1, b.vmax, b.vmin]
        lines.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
    lines += ["];", "", "%% bus Pg Qg Qmax Qmin Vg mBase status Pmax Pmin", "mpc.gen = ["]
    for g in case.gens:
        vals = [g.bus, g.pg, g.qg, g.qmax, g.qmin, g.vg, case.base_mva, int(g.in_service), g.pmax, g.pmin]
        lines.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
    lines += ["];", "", "%% fbus tbus r x b rateA rateB rateC ratio angle status", "mpc.branch = ["]
    for br in case.branches:
        vals = [br.f, br.t, br.r, br.x, br.b, br.rate_mva, 0, 0, br.tap, br.shift_deg, int(br.in_service)]
        lines.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
    lines.append("];")
    if all(g.cost is not None for g in case.gens) and case.gens:
        lines += ["", "%% model startup shutdown n coefficients", "mpc.gencost = ["]
        for g in case.gens:
            n = len(g.cost.coeffs) if g.cost.model == 2 else len(g.cost.coeffs) // 2
            vals = [g.cost.model, 0, 0, n, *g.cost.coeffs]
            lines.append("\t" + "\t".join(_fmt(v) for v in vals) + ";")
        lines.append("];")
    Path(path).write_text("\n".join(lines) + "\n")

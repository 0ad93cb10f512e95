"""Assemble the scheduling mixed-integer program for one portfolio.

Variables are created only for admissible (job, site, slot) cells, so the
window constraint is enforced structurally. Each objective term is stored
as its own coefficient vector plus constant so a solution can be audited
term by term.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from ..model import SchedulePlan, SchedulingInstance, admissibility

TERMS = ("R", "C_elec", "C_ramp", "P_realloc", "P_delay", "P_term")
TERM_SIGN = {"R": 1.0, "C_elec": -1.0, "C_ramp": -1.0,
             "P_realloc": -1.0, "P_delay": -1.0, "P_term": -1.0}


@dataclass(frozen=True)
class PiecewiseTerm:
    """Epigraph ``aux >= max_k(slope_k * var + intercept_k)`` under-approximating ``var**2``."""

    var: int
    aux: int
    slopes: tuple[float, ...]
    intercepts: tuple[float, ...]

    def value(self, g: float) -> float:
        return max(0.0, max(a * g + b for a, b in zip(self.slopes, self.intercepts)))


@dataclass
class MathProgram:
    names: list[str]
    integer: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    A: sp.csr_matrix
    sense: np.ndarray          # '<', '>' or '='
    rhs: np.ndarray
    row_names: list[str]
    row_kind: list[str]
    terms: dict[str, tuple[np.ndarray, float]]
    index: dict[tuple, int]
    shape: tuple[int, int, int]
    pwl: list[PiecewiseTerm] = field(default_factory=list)
    ramp_sites: dict[int, tuple[float, float]] = field(default_factory=dict)
    pwl_bound_apriori: float = 0.0

    @property
    def n_vars(self) -> int:
        return len(self.names)

    @property
    def n_rows(self) -> int:
        return len(self.row_names)

    @property
    def objective(self) -> np.ndarray:
        """Maximization coefficients (all terms combined)."""
        c = np.zeros(self.n_vars)
        for name, (vec, _) in self.terms.items():
            c += TERM_SIGN[name] * vec
        return c

    @property
    def objective_constant(self) -> float:
        return sum(TERM_SIGN[n] * k for n, (_, k) in self.terms.items())

    def value(self, v: np.ndarray) -> float:
        return float(self.objective @ v) + self.objective_constant

    def breakdown(self, v: np.ndarray) -> dict[str, float]:
        return {n: float(vec @ v) + k for n, (vec, k) in self.terms.items()}

    def family_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for key in self.index:
            out[key[0]] = out.get(key[0], 0) + 1
        return out

    def rows_for(self, kind: str) -> list[int]:
        return [i for i, e in enumerate(self.row_kind) if e == kind]

    def check(self) -> None:
        """Structural invariants: bounds ordered, finite rows, convex PWL terms."""
        if np.any(self.lb > self.ub):
            raise ValueError("variable with lb > ub")
        if self.A.shape != (self.n_rows, self.n_vars):
            raise ValueError("constraint matrix shape mismatch")
        if not np.all(np.isfinite(self.A.data)):
            raise ValueError("non-finite constraint coefficient")
        for term in self.pwl:
            if np.any(np.diff(term.slopes) < 0):
                raise ValueError("piecewise term is not convex")

    def residuals(self, v: np.ndarray) -> np.ndarray:
        """Constraint violation per row (0 when satisfied)."""
        ax = self.A @ v
        viol = np.zeros(self.n_rows)
        le = self.sense == "<"
        ge = self.sense == ">"
        eq = self.sense == "="
        viol[le] = np.maximum(0, ax[le] - self.rhs[le])
        viol[ge] = np.maximum(0, self.rhs[ge] - ax[ge])
        viol[eq] = np.abs(ax[eq] - self.rhs[eq])
        return viol

    def extract_plan(self, v: np.ndarray) -> SchedulePlan:
        x = np.zeros(self.shape, dtype=np.int64)
        c = np.zeros(self.shape)
        for key, i in self.index.items():
            if key[0] == "x":
                x[key[1:]] = int(round(v[i]))
            elif key[0] == "c":
                c[key[1:]] = max(0.0, float(v[i]))
        return SchedulePlan(x, c)

    def polish(self, v: np.ndarray) -> np.ndarray:
        """Round integers and make auxiliaries tight for the x/c part of ``v``."""
        v = np.array(v, dtype=float)
        ints = self.integer
        v[ints] = np.round(v[ints])
        plan = self.extract_plan(v)
        x, c = plan.x, plan.c
        for key, i in self.index.items():
            kind = key[0]
            if kind == "c":
                v[i] = c[key[1:]]
            elif kind == "r":
                j, s, t = key[1:]
                v[i] = abs(x[j, s, t] - x[j, s, t - 1])
            elif kind == "u":
                j, s = key[1:]
                v[i] = float(x[j, s].any())
            elif kind == "lev":
                v[i] = float(x[key[1]].max())
            elif kind == "z":
                j, t = key[1:]
                v[i] = float(x[j, :, t].any())
            elif kind == "y":
                v[i] = float(x[key[1:]] > 0)
        for key, i in self.index.items():
            if key[0] == "b":
                j, t = key[1:]
                prev = self.index.get(("z", j, t - 1))
                v[i] = float(v[self.index[("z", j, t)]] > 0.5 and (prev is None or v[prev] < 0.5))
        L = c.sum(axis=0)
        for key, i in self.index.items():
            if key[0] == "g":
                s, t = key[1:]
                k, delta = self.ramp_sites[s]
                v[i] = max(0.0, abs(k * (L[s, t] - L[s, t - 1])) - delta)
        for term in self.pwl:
            v[term.aux] = term.value(v[term.var])
        return v


class _Builder:
    def __init__(self):
        self.names, self.integer, self.lb, self.ub = [], [], [], []
        self.index: dict[tuple, int] = {}
        self.rows, self.cols, self.vals = [], [], []
        self.sense, self.rhs, self.row_names, self.row_kind = [], [], [], []

    def var(self, key: tuple, lb: float, ub: float, integer: bool = False) -> int:
        i = len(self.names)
        self.index[key] = i
        self.names.append(key[0] + "_" + "_".join(str(k) for k in key[1:]))
        self.integer.append(integer)
        self.lb.append(lb)
        self.ub.append(ub)
        return i

    def row(self, coeffs: dict[int, float], sense: str, rhs: float, kind: str, name: str) -> None:
        r = len(self.row_names)
        for col, val in coeffs.items():
            if val != 0:
                self.rows.append(r)
                self.cols.append(col)
                self.vals.append(float(val))
        self.sense.append(sense)
        self.rhs.append(float(rhs))
        self.row_kind.append(kind)
        self.row_names.append(name)


def _add(d: dict, key: int, val: float) -> None:
    d[key] = d.get(key, 0.0) + val


def build_program(instance: SchedulingInstance) -> MathProgram:
    """Build the program for ``instance.portfolio`` (the queue baseline has no program)."""
    pf = instance.portfolio
    if pf.fcfs:
        raise ValueError("the FCFS baseline is not an optimization portfolio")
    J, S, T = instance.shape
    dt = instance.horizon.dt
    T0 = instance.horizon.slot_count_original
    adm = admissibility(instance)
    ele = instance.prices.electricity
    svc = instance.prices.service
    b = _Builder()
    coef = {t: {} for t in TERMS}
    const = {t: 0.0 for t in TERMS}

    for j, job in enumerate(instance.jobs):
        xbar = job.max_cpus_per_slot
        delay = set(job.delay_slots())
        window = np.nonzero(adm[j])[0]
        for s, site in enumerate(instance.sites):
            for t in window:
                xi = b.var(("x", j, s, t), 0, xbar, integer=True)
                ci = b.var(("c", j, s, t), 0, site.rate_hi * xbar)
                b.row({ci: 1.0, xi: -site.rate_hi}, "<", 0.0, "rate", f"rate_hi_{j}_{s}_{t}")
                if site.rate_lo > 0:
                    b.row({ci: 1.0, xi: -site.rate_lo}, ">", 0.0, "rate", f"rate_lo_{j}_{s}_{t}")
                coef["R"][ci] = job.svc_price_scale * svc[s, t] * dt
                coef["C_elec"][ci] = ele[s, t] * site.mw_per_unit * dt
                if t in delay:
                    coef["P_delay"][ci] = pf.eta * dt
                coef["P_term"][ci] = -pf.phi * dt
        const["P_term"] += pf.phi * job.total_work
        cells = {b.index[("c", j, s, t)]: dt for s in range(S) for t in window}
        b.row(cells, "<" if pf.enable_termination else "=", job.total_work, "work", f"work_{j}")

    for s, site in enumerate(instance.sites):
        const["C_elec"] += float(np.sum(ele[s, :T0])) * site.idle_facility_mw * dt
        for t in range(T):
            cols = {b.index[("x", j, s, t)]: 1.0 for j in range(J) if adm[j, t]}
            if cols:
                b.row(cols, "<", site.cpu_capacity, "capacity", f"cap_{s}_{t}")

    # allocation changes, including ramp-in at release and ramp-out after the window
    for j, job in enumerate(instance.jobs):
        window = np.nonzero(adm[j])[0]
        lo, hi = int(window[0]), int(window[-1])
        for s in range(S):
            for t in range(max(1, lo), min(hi + 1, T - 1) + 1):
                cur = b.index.get(("x", j, s, t))
                prev = b.index.get(("x", j, s, t - 1))
                ri = b.var(("r", j, s, t), 0, job.max_cpus_per_slot)
                up, down = {ri: 1.0}, {ri: 1.0}
                if cur is not None:
                    _add(up, cur, -1.0)
                    _add(down, cur, 1.0)
                if prev is not None:
                    _add(up, prev, 1.0)
                    _add(down, prev, -1.0)
                b.row(up, ">", 0.0, "realloc", f"realloc_up_{j}_{s}_{t}")
                b.row(down, ">", 0.0, "realloc", f"realloc_dn_{j}_{s}_{t}")
                coef["P_realloc"][ri] = pf.rho

    if not pf.enable_realloc:
        _fixed_path(b, instance, adm)

    pwl: list[PiecewiseTerm] = []
    ramp_sites = {}
    bound = 0.0
    if pf.ramp_active:
        K = pf.pwl_segments
        for s, site in enumerate(instance.sites):
            k = site.mw_per_unit
            delta = site.ramp_tolerance_mw
            ramp_sites[s] = (k, delta)
            gmax = site.peak_facility_mw
            width = gmax / K
            mids = [(i + 0.5) * width for i in range(K)]
            for t in range(1, T):
                diff: dict[int, float] = {}
                for j in range(J):
                    if adm[j, t]:
                        _add(diff, b.index[("c", j, s, t)], k)
                    if adm[j, t - 1]:
                        _add(diff, b.index[("c", j, s, t - 1)], -k)
                if not diff:
                    continue
                gi = b.var(("g", s, t), 0.0, gmax)
                b.row({gi: 1.0, **{c: -v for c, v in diff.items()}}, ">", -delta, "ramp", f"ramp_up_{s}_{t}")
                b.row({gi: 1.0, **diff}, ">", -delta, "ramp", f"ramp_dn_{s}_{t}")
                if pf.ramp_form == "linear":
                    coef["C_ramp"][gi] = pf.gamma
                else:
                    hi_ = b.var(("h", s, t), 0.0, gmax * gmax)
                    for m in mids:
                        b.row({hi_: 1.0, gi: -2.0 * m}, ">", -m * m, "ramp_pwl", f"ramp_pwl_{s}_{t}")
                    coef["C_ramp"][hi_] = pf.gamma
                    pwl.append(PiecewiseTerm(gi, hi_, tuple(2.0 * m for m in mids),
                                             tuple(-m * m for m in mids)))
                    bound += pf.gamma * (width / 2) ** 2

    n = len(b.names)
    A = sp.csr_matrix((b.vals, (b.rows, b.cols)), shape=(len(b.row_names), n))
    terms = {}
    for name in TERMS:
        vec = np.zeros(n)
        for i, val in coef[name].items():
            vec[i] = val
        terms[name] = (vec, const[name])
    prog = MathProgram(
        names=b.names, integer=np.array(b.integer, dtype=bool),
        lb=np.array(b.lb, dtype=float), ub=np.array(b.ub, dtype=float), A=A,
        sense=np.array(b.sense, dtype="<U1"), rhs=np.array(b.rhs, dtype=float),
        row_names=b.row_names, row_kind=b.row_kind, terms=terms, index=b.index,
        shape=(J, S, T), pwl=pwl, ramp_sites=ramp_sites, pwl_bound_apriori=bound)
    prog.check()
    return prog


def _fixed_path(b: _Builder, instance: SchedulingInstance, adm: np.ndarray) -> None:
    """One site, one contiguous run, one CPU level per job (reallocation disabled).

    ``x[j,s,t] = level_j * y[j,s,t]`` with ``y = site_js * run_jt`` held in its own
    binary, linearized with big-M = X_bar_j.
    """
    S = len(instance.sites)
    for j, job in enumerate(instance.jobs):
        M = job.max_cpus_per_slot
        window = np.nonzero(adm[j])[0]
        u = [b.var(("u", j, s), 0, 1, integer=True) for s in range(S)]
        lev = b.var(("lev", j), 0, M, integer=True)
        b.row({ui: 1.0 for ui in u}, "<", 1.0, "path", f"path_site_{j}")
        z = {t: b.var(("z", j, t), 0, 1, integer=True) for t in window}
        starts = {}
        for t in window:
            zt = z[t]
            cell = {}
            for s in range(S):
                x = b.index[("x", j, s, t)]
                y = b.var(("y", j, s, t), 0, 1, integer=True)
                cell[y] = 1.0
                b.row({y: 1.0, u[s]: -1.0}, "<", 0.0, "path", f"path_u_{j}_{s}_{t}")
                b.row({x: 1.0, y: -M}, "<", 0.0, "path", f"path_y_{j}_{s}_{t}")
                b.row({x: 1.0, lev: -1.0}, "<", 0.0, "path", f"path_lev_{j}_{s}_{t}")
                b.row({x: 1.0, lev: -1.0, y: -M}, ">", -M, "path", f"path_link_{j}_{s}_{t}")
            b.row({**cell, zt: -1.0}, "=", 0.0, "path", f"path_z_{j}_{t}")
            bi = b.var(("b", j, t), 0, 1, integer=True)
            starts[t] = bi
            row = {bi: 1.0, zt: -1.0}
            if t - 1 in z:
                row[z[t - 1]] = 1.0
            b.row(row, ">", 0.0, "path", f"path_start_{j}_{t}")
        b.row({bi: 1.0 for bi in starts.values()}, "<", 1.0, "path", f"path_once_{j}")


def _lp_expr(coeffs, names) -> str:
    parts = []
    for col, val in coeffs:
        sign = "-" if val < 0 else "+"
        parts.append(f"{sign} {abs(val):.17g} {names[col]}")
    text = " ".join(parts) if parts else "0"
    return text[2:] if text.startswith("+ ") else text


def export_lp(prog: MathProgram, path) -> None:
    """Write the program in CPLEX LP text format (constant objective terms as a comment)."""
    A = prog.A.tocsr()
    obj = prog.objective
    lines = [f"\\ objective constant: {prog.objective_constant:.17g}", "Maximize",
             " obj: " + _lp_expr([(i, v) for i, v in enumerate(obj) if v != 0], prog.names),
             "Subject To"]
    ops = {"<": "<=", ">": ">=", "=": "="}
    for r in range(prog.n_rows):
        start, end = A.indptr[r], A.indptr[r + 1]
        expr = _lp_expr(zip(A.indices[start:end], A.data[start:end]), prog.names)
        lines.append(f" {prog.row_names[r]}: {expr} {ops[prog.sense[r]]} {prog.rhs[r]:.17g}")
    lines.append("Bounds")
    for i, name in enumerate(prog.names):
        ub = "+inf" if np.isinf(prog.ub[i]) else f"{prog.ub[i]:.17g}"
        lines.append(f" {prog.lb[i]:.17g} <= {name} <= {ub}")
    ints = [prog.names[i] for i in np.nonzero(prog.integer)[0]]
    if ints:
        lines.append("General")
        lines.extend(f" {n}" for n in ints)
    lines.append("End")
    Path(path).write_text("\n".join(lines) + "\n")

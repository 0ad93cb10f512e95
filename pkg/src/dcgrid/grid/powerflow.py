"""Newton-Raphson AC power flow in polar coordinates.

Unknowns are voltage angles at PV and PQ buses and magnitudes at PQ buses.
The start point is 1.0 pu / 0 rad except that generator buses take their
voltage setpoints. Reactive limits are not enforced.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .case import ISOLATED, PQ, PV, SLACK, NetworkCase


@dataclass(frozen=True)
class PFOptions:
    tol: float = 1e-8           # max |P|, |Q| mismatch in pu
    max_iter: int = 20


@dataclass
class PFSolution:
    converged: bool
    iterations: int
    max_mismatch: float
    vm: np.ndarray              # pu, bus order of the case
    va: np.ndarray              # rad
    s_from: np.ndarray          # complex MVA injected at the from end
    s_to: np.ndarray            # complex MVA injected at the to end
    pg: np.ndarray              # MW per generator
    qg: np.ndarray              # MVAr per generator
    trace: list[float] = field(default_factory=list)

    @property
    def va_deg(self) -> np.ndarray:
        return np.degrees(self.va)

    @property
    def losses_mw(self) -> float:
        return float(np.sum((self.s_from + self.s_to).real))

    @property
    def flow_mva(self) -> np.ndarray:
        """Branch loading: the larger of the two end apparent powers."""
        return np.maximum(np.abs(self.s_from), np.abs(self.s_to))


def make_ybus(case: NetworkCase):
    """Bus admittance matrix and the from/to branch admittance matrices (pu)."""
    n = len(case.buses)
    pos = case.bus_index()
    br = [b for b in case.branches]
    nl = len(br)
    on = np.array([b.in_service for b in br], dtype=float)
    ys = on * np.array([1.0 / complex(b.r, b.x) if b.in_service else 0 for b in br], dtype=complex)
    bc = on * np.array([b.b for b in br])
    tap = np.array([b.ratio * np.exp(1j * np.radians(b.shift_deg)) for b in br], dtype=complex)
    ytt = ys + 0.5j * bc
    yff = ytt / (tap * np.conj(tap))
    yft = -ys / np.conj(tap)
    ytf = -ys / tap
    f = np.array([pos[b.f] for b in br], dtype=int)
    t = np.array([pos[b.t] for b in br], dtype=int)
    idx = np.arange(nl)
    Cf = sp.csr_matrix((np.ones(nl), (idx, f)), shape=(nl, n))
    Ct = sp.csr_matrix((np.ones(nl), (idx, t)), shape=(nl, n))
    Yf = sp.csr_matrix((np.concatenate([yff, yft]), (np.concatenate([idx, idx]), np.concatenate([f, t]))),
                       shape=(nl, n))
    Yt = sp.csr_matrix((np.concatenate([ytf, ytt]), (np.concatenate([idx, idx]), np.concatenate([f, t]))),
                       shape=(nl, n))
    ysh = np.array([complex(b.gs, b.bs) for b in case.buses]) / case.base_mva
    Ybus = (Cf.T @ Yf + Ct.T @ Yt + sp.diags(ysh)).tocsr()
    return Ybus, Yf.tocsr(), Yt.tocsr(), f, t


def _injections(case: NetworkCase) -> np.ndarray:
    pos = case.bus_index()
    s = np.array([-complex(b.pd, b.qd) for b in case.buses])
    for g in case.gens:
        if g.in_service:
            s[pos[g.bus]] += complex(g.pg, g.qg)
    return s / case.base_mva


def _dS_dV(Ybus, V):
    """Partial derivatives of bus injections w.r.t. angle and magnitude."""
    Ibus = Ybus @ V
    dV = sp.diags(V)
    dI = sp.diags(Ibus)
    dVn = sp.diags(V / np.abs(V))
    dS_dVm = dV @ np.conj(Ybus @ dVn) + np.conj(dI) @ dVn
    dS_dVa = 1j * dV @ np.conj(dI - Ybus @ dV)
    return dS_dVa, dS_dVm


def ac_power_flow(case: NetworkCase, options: PFOptions = PFOptions()) -> PFSolution:
    pos = case.bus_index()
    types = np.array([b.type for b in case.buses])
    Ybus, Yf, Yt, f, t = make_ybus(case)
    Sbus = _injections(case)
    vm = np.ones(len(case.buses))
    for g in case.gens:
        i = pos[g.bus]
        if g.in_service and types[i] in (PV, SLACK):
            vm[i] = g.vg
    V = vm.astype(complex)
    pv = np.nonzero(types == PV)[0]
    pq = np.nonzero(types == PQ)[0]
    pvpq = np.concatenate([pv, pq])
    npvpq, npq = len(pvpq), len(pq)

    def mismatch(V):
        mis = V * np.conj(Ybus @ V) - Sbus
        return np.concatenate([mis[pvpq].real, mis[pq].imag])

    F = mismatch(V)
    norm = float(np.max(np.abs(F), initial=0.0))
    trace = [norm]
    it = 0
    converged = norm <= options.tol
    while not converged and it < options.max_iter:
        it += 1
        dVa, dVm = _dS_dV(Ybus, V)
        J = sp.vstack([
            sp.hstack([dVa[pvpq][:, pvpq].real, dVm[pvpq][:, pq].real]),
            sp.hstack([dVa[pq][:, pvpq].imag, dVm[pq][:, pq].imag]),
        ]).tocsc()
        try:
            dx = -splu(J).solve(F)
        except RuntimeError:
            break
        va = np.angle(V)
        mag = np.abs(V)
        va[pvpq] += dx[:npvpq]
        mag[pq] += dx[npvpq:npvpq + npq]
        V = mag * np.exp(1j * va)
        F = mismatch(V)
        norm = float(np.max(np.abs(F), initial=0.0))
        if not np.isfinite(norm):
            trace.append(norm)
            break
        trace.append(norm)
        converged = norm <= options.tol
    return _finish(case, V, Ybus, Yf, Yt, f, t, converged, it, norm, trace, types)


def _finish(case, V, Ybus, Yf, Yt, f, t, converged, it, norm, trace, types) -> PFSolution:
    base = case.base_mva
    pos = case.bus_index()
    s_from = V[f] * np.conj(Yf @ V) * base
    s_to = V[t] * np.conj(Yt @ V) * base
    inj = V * np.conj(Ybus @ V) * base
    pg = np.array([g.pg if g.in_service else 0.0 for g in case.gens], dtype=float)
    qg = np.array([g.qg if g.in_service else 0.0 for g in case.gens], dtype=float)
    # generator buses: the slack takes the P balance, slack and PV take the Q balance
    for i, b in enumerate(case.buses):
        on = [k for k, g in enumerate(case.gens) if g.in_service and pos[g.bus] == i]
        if not on or b.type not in (PV, SLACK):
            continue
        fixed_q = sum(case.gens[k].qg for k, g in enumerate(case.gens)
                      if g.in_service and pos[g.bus] == i and k not in on)
        q_total = inj[i].imag + b.qd - fixed_q
        for k in on:
            qg[k] = q_total / len(on)
        if b.type == SLACK:
            p_total = inj[i].real + b.pd
            others = sum(pg[k] for k in on[1:])
            pg[on[0]] = p_total - others
    vm = np.abs(V)
    va = np.angle(V)
    vm[types == ISOLATED] = 0.0
    return PFSolution(bool(converged), it, norm, vm, va, s_from, s_to, pg, qg, trace)


def balance_residual(case: NetworkCase, sol: PFSolution) -> np.ndarray:
    """Nodal P/Q mismatch (pu) recomputed from the solved voltages and dispatch."""
    Ybus, *_ = make_ybus(case)
    pos = case.bus_index()
    V = sol.vm * np.exp(1j * sol.va)
    s = np.array([-complex(b.pd, b.qd) for b in case.buses])
    for k, g in enumerate(case.gens):
        if g.in_service:
            s[pos[g.bus]] += complex(sol.pg[k], sol.qg[k])
    return V * np.conj(Ybus @ V) - s / case.base_mva

"""Optimality certificates: variational inequality over vertices and the discretized minimax pair."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

from ..dual_domain import MAX_VERTEX_PATHS, linear_max, vertices
from ..errors import SizeGuardError, SolverError
from ..market_model import MarketScenario
from ..utility import UtilityField
from .dual import DualProblem

MAX_MINIMAX_NODES = 16
MAX_EXHAUSTIVE = 50_000_000


@dataclass
class VIReport:
    worst: float
    q: np.ndarray
    n_checked: int

    def ok(self, tol: float = 1e-7) -> bool:
        return self.worst <= tol


def variational_inequality_check(s: MarketScenario, U: UtilityField, y: float, Q, weights=None) -> VIReport:
    """max over vertices Q of sum_n w_n (Q_n - Qhat_n) I(t, y Yhat_n) + <Qhat - Q, E_T>.

    The left side is linear in Q, so when the vertex list is too large the
    maximum comes from the exact tree recursion instead.
    """
    dp = DualProblem(s, U, weights)
    qh = np.asarray(Q, dtype=float)
    a = dp.Mc.T @ (dp.w * dp.consumption(y, qh)) - dp.E
    base = float(a @ qh)
    poly = dp.poly
    if poly.n_paths <= MAX_VERTEX_PATHS:
        try:
            V = vertices(poly)
            vals = V @ a - base
            k = int(np.argmax(vals))
            return VIReport(float(vals[k]), V[k], V.shape[0])
        except SizeGuardError:
            pass
    val, q = linear_max(poly, a)
    return VIReport(val - base, q, 0)


@dataclass
class MinimaxReport:
    sup_inf: float
    inf_sup: float
    exhaustive: bool
    grid_step: float

    @property
    def difference(self) -> float:
        return abs(self.sup_inf - self.inf_sup)


def _capped_grid(U, t, n, c_cap, step):
    g = np.arange(1, int(round(c_cap / step)) + 1) * step
    if np.isfinite(U.u(t, n, 0.0)):
        g = np.r_[0.0, g]
    return g


def minimax_check(
    s: MarketScenario, U: UtilityField, y: float, c_cap: float = 4.0, step: float = 1e-3, weights=None
) -> MinimaxReport:
    """Both iterated optima of L(c, Q) = sum P w (U(c) - y Y c) + y <Q, E_T>, c on a capped grid.

    inf_Q sup_c: the inner sup separates node-wise into a convex piecewise
    linear function of Y, so the outer inf is an exact epigraph LP over the
    domain. sup_c inf_Q: the inner inf is a minimum over vertices; the outer
    sup is exhaustive over the grid product when it has at most 5e7 points,
    otherwise coordinate ascent (reported as non-exhaustive).
    """
    dp = DualProblem(s, U, weights)
    k = dp.nodes.size
    if k > MAX_MINIMAX_NODES:
        raise SizeGuardError(f"minimax check limited to {MAX_MINIMAX_NODES} charged nodes, got {k}")
    grids = [_capped_grid(U, dp.t[j], dp.nodes[j], c_cap, step) for j in range(k)]
    utils = [np.asarray(U.u(dp.t[j], dp.nodes[j], grids[j]), dtype=float) for j in range(k)]
    pw = dp.P * dp.w
    inf_sup = _inf_sup(dp, y, grids, utils, pw)
    V = vertices(dp.poly)
    Qv = V @ dp.Mc.T  # vertices x charged nodes
    Ev = V @ dp.E
    total = int(np.prod([g.size for g in grids], dtype=float))
    if total <= MAX_EXHAUSTIVE:
        sup_inf = _sup_inf_exhaustive(grids, utils, pw, dp.w, Qv, Ev, y)
        exhaustive = True
    else:
        sup_inf = _sup_inf_ascent(grids, utils, pw, dp.w, Qv, Ev, y)
        exhaustive = False
    return MinimaxReport(sup_inf, inf_sup, exhaustive, step)


def _inf_sup(dp, y, grids, utils, pw):
    m = dp.poly.n_paths
    k = len(grids)
    # variables: q (m), tau (k); objective sum pw tau + y E.q
    cost = np.r_[y * dp.E, pw]
    rows, rhs = [], []
    for j in range(k):
        # tau_j >= U(c) - y c Y_j, with Y_j = Mc_j q / P_j
        coef_q = (y / dp.P[j]) * dp.Mc[j]
        for cval, uval in zip(grids[j], utils[j]):
            r = np.zeros(m + k)
            r[:m] = -cval * coef_q
            r[m + j] = -1.0
            rows.append(r)
            rhs.append(-uval)
    A_ub = np.array(rows)
    b_ub = np.array(rhs)
    if dp.poly.A.size:
        A_ub = np.vstack([A_ub, np.hstack([dp.poly.A, np.zeros((dp.poly.A.shape[0], k))])])
        b_ub = np.r_[b_ub, np.zeros(dp.poly.A.shape[0])]
    A_eq = np.r_[np.ones(m), np.zeros(k)][None, :]
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=[(0, None)] * m + [(None, None)] * k, method="highs")
    if res.status != 0:
        raise SolverError(f"minimax epigraph LP failed: {res.message}")
    return float(res.fun)


def _sup_inf_exhaustive(grids, utils, pw, w, Qv, Ev, y, chunk=2_000_000):
    # L(c, v) = sum_j pw_j U_j(c_j) - y sum_j w_j Qv_j c_j + y Ev
    sizes = [g.size for g in grids]
    k = len(grids)
    if k == 0:
        return float(y * Ev.min())
    lead = k - 1
    inner = sizes[lead]
    outer = int(np.prod(sizes[:lead], dtype=float)) if lead else 1
    best = -np.inf
    gl = grids[lead]
    ul = pw[lead] * utils[lead]
    lin_l = y * w[lead] * np.outer(Qv[:, lead], gl)  # vertices x inner
    step = max(1, chunk // max(inner * Qv.shape[0], 1))
    for start in range(0, outer, step):
        idx = np.unravel_index(np.arange(start, min(outer, start + step)), sizes[:lead]) if lead else ()
        base_u = np.zeros(len(idx[0]) if lead else 1)
        base_lin = np.tile(y * Ev, (base_u.size, 1))  # outer x vertices
        for j in range(lead):
            c = grids[j][idx[j]]
            base_u = base_u + pw[j] * utils[j][idx[j]]
            base_lin = base_lin - y * w[j] * np.outer(c, Qv[:, j])
        # value[o, v, i] = base_u[o] + ul[i] + base_lin[o, v] - lin_l[v, i]
        vals = base_lin[:, :, None] - lin_l[None, :, :]
        inf_v = vals.min(axis=1) + base_u[:, None] + ul[None, :]
        with np.errstate(invalid="ignore"):
            m = np.nanmax(inf_v)
        best = max(best, float(m))
    return best


def _sup_inf_ascent(grids, utils, pw, w, Qv, Ev, y, sweeps=50):
    k = len(grids)
    idx = [g.size // 2 for g in grids]

    def value(ix):
        c = np.array([grids[j][ix[j]] for j in range(k)])
        u = sum(pw[j] * utils[j][ix[j]] for j in range(k))
        return u + float(np.min(y * Ev - y * (Qv * w) @ c))

    cur = value(idx)
    for _ in range(sweeps):
        moved = False
        for j in range(k):
            c = np.array([grids[jj][idx[jj]] for jj in range(k)])
            rest = y * Ev - y * (Qv * w) @ c + y * w[j] * Qv[:, j] * c[j]
            cand = pw[j] * utils[j][None, :] + np.min(rest[:, None] - y * w[j] * np.outer(Qv[:, j], grids[j]), axis=0)
            other = sum(pw[jj] * utils[jj][idx[jj]] for jj in range(k) if jj != j)
            i = int(np.nanargmax(cand))
            if cand[i] + other > cur + 1e-15:
                idx[j], cur, moved = i, float(cand[i] + other), True
        if not moved:
            break
    return cur

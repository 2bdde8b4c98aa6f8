"""Primal side: consumption recovery, budget check, financing portfolio, brute-force referee."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, minimize

from ..dual_domain import MAX_VERTEX_PATHS, linear_max_lp, polytope, vertices
from ..errors import DegenerateDualError, FinancingError, SizeGuardError, SolverError
from ..market_model import MarketScenario, Strategy, cumulative_from_rate
from ..utility import UtilityField
from .dual import DualProblem

MAX_ORACLE_NODES = 8


def recover_consumption(s: MarketScenario, U: UtilityField, y: float, Q, weights=None) -> np.ndarray:
    """c(n) = I(t, n, y Y(n)) on charged nodes, NaN elsewhere."""
    dp = DualProblem(s, U, weights)
    q = np.asarray(Q, dtype=float)
    Y = dp.density(q)
    if np.any(Y <= 0):
        zero = Y <= 0
        if np.any(np.isinf(U.i(dp.t[zero], dp.nodes[zero], 1e-300))):
            n = int(dp.nodes[np.flatnonzero(zero)[0]])
            raise DegenerateDualError(
                f"dual optimizer degenerate on support of mu: Y = 0 at charged node {s.tree.labels[n]!r}"
            )
    c = np.full(s.tree.n_nodes, np.nan)
    c[dp.nodes] = dp.consumption(y, q)
    return c


def primal_value(s: MarketScenario, U: UtilityField, c, weights=None) -> float:
    """sum_n P_n w_n u(t_n, n, c_n) over charged nodes; -inf when some term is -inf."""
    w_all = s.node_weights if weights is None else np.asarray(weights, dtype=float)
    nodes = np.flatnonzero(w_all > 0)
    c = np.asarray(c, dtype=float)[nodes]
    if np.any(c < 0) or np.any(np.isnan(c)):
        raise ValueError("consumption must be nonnegative on charged nodes")
    with np.errstate(divide="ignore"):
        u = np.asarray(U.u(s.tree.time_index[nodes], nodes, c), dtype=float)
    if np.any(np.isneginf(u)):
        return -np.inf
    return float(np.sum(s.tree.prob[nodes] * w_all[nodes] * u))


@dataclass
class BudgetReport:
    """max over the domain of E_Q[C_T] - <Q, E_T> - x, and where it is attained."""

    slack: float
    q: np.ndarray
    method: str

    def admissible(self, tol: float = 1e-9) -> bool:
        return self.slack <= tol


def budget_check(s: MarketScenario, C, x: float, max_paths: int = MAX_VERTEX_PATHS) -> BudgetReport:
    """Worst budget slack over the domain.

    On a tree E int Y^Q dC = <Q, C_T>, so the constraint is linear in q: the
    maximum is taken over the vertex list when there are at most ``max_paths``
    paths and through an LP otherwise.
    """
    C = np.asarray(C, dtype=float)
    poly = polytope(s)
    coef = C[s.tree.paths] - s.terminal_endowment
    if poly.n_paths <= max_paths:
        try:
            V = vertices(poly, max_paths=max_paths)
            vals = V @ coef
            k = int(np.argmax(vals))
            return BudgetReport(float(vals[k] - x), V[k], "vertices")
        except SizeGuardError:
            pass
    val, q = linear_max_lp(poly, coef)
    return BudgetReport(val - x, q, "lp")


@dataclass
class FinancingResult:
    """Portfolio H per node, wealth X before consumption, super-replication price Z, surplus F = X - Z."""

    H: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    F: np.ndarray
    strategy: Strategy


def recover_portfolio(s: MarketScenario, C, x: float, tol: float = 1e-9) -> FinancingResult:
    """Backward super-replication of C_T - E_T and the node-wise hedge.

    Z at a terminal node is C_T - E_T. At a non-terminal node Z is the largest
    one-step expectation of the children's Z over the node's one-step domain,
    and H solves Z_n + H . dS_c >= Z_c for every child with H in the cone
    (node LP: minimal shortfall, then minimal generator weight). The surplus
    F = X - Z is nondecreasing along paths.
    """
    tree = s.tree
    C = np.asarray(C, dtype=float)
    poly = polytope(s)
    dS = s.price_increments
    g = s.cone.generators
    Z = np.zeros(tree.n_nodes)
    Z[tree.paths] = C[tree.paths] - s.endowment[tree.paths]
    H = np.zeros((tree.n_nodes, s.d))
    for n in reversed(range(tree.n_nodes)):
        if not tree.children[n]:
            continue
        ch, R, V = poly.local[n]
        Z[n] = float(np.max(Z[ch] @ V))
        lam, short = _node_hedge(R.T, Z[ch] - Z[n])
        if short > tol * max(1.0, float(np.max(np.abs(Z[ch])))):
            raise FinancingError(
                f"node LP infeasible at {tree.labels[n]!r}: shortfall {short:.3g}", node=tree.labels[n], shortfall=short
            )
        H[n] = lam @ g
    root = int(np.flatnonzero(tree.parent < 0)[0])
    if Z[root] > x + tol * max(1.0, abs(x)):
        raise FinancingError(
            f"plan needs initial capital {Z[root]:.12g} > x = {x:.12g}", node=tree.labels[root], shortfall=Z[root] - x
        )
    X = np.zeros(tree.n_nodes)
    X[root] = x
    for n in range(tree.n_nodes):
        p = tree.parent[n]
        if p >= 0:
            X[n] = X[p] + float(H[p] @ dS[n])
    return FinancingResult(H, X, Z, X - Z, Strategy(H, C))


def _node_hedge(B, target):
    """min shortfall s >= 0 with B lam + s >= target, lam >= 0; then min sum(lam) at that shortfall."""
    k = B.shape[1]
    A_ub = np.hstack([-B, -np.ones((B.shape[0], 1))])
    res = linprog(np.r_[np.zeros(k), 1.0], A_ub=A_ub, b_ub=-target, bounds=[(0, None)] * (k + 1), method="highs")
    if res.status != 0:
        raise SolverError(f"node hedge LP failed: {res.message}")
    short = float(res.x[-1])
    cap = short + 1e-12 * max(1.0, float(np.max(np.abs(target))))
    res2 = linprog(
        np.r_[np.ones(k), 0.0],
        A_ub=A_ub,
        b_ub=-target,
        bounds=[(0, None)] * k + [(0, cap)],
        method="highs",
    )
    lam = res2.x[:k] if res2.status == 0 else res.x[:k]
    return lam, short


def financing_lp(s: MarketScenario, C, x: float) -> tuple[bool, float]:
    """Global LP: is there H in the cone at every node with terminal wealth >= 0?

    Maximizes the minimum terminal wealth over all node holdings at once; returns
    (feasible, best worst-case terminal wealth). Independent of the recursion.
    """
    tree = s.tree
    C = np.asarray(C, dtype=float)
    g = s.cone.generators
    k = g.shape[0]
    nt = list(tree.nonterminal)
    col = {int(n): i for i, n in enumerate(nt)}
    nv = len(nt) * k + 1
    dS = s.price_increments
    A, b = [], []
    for leaf in tree.paths:
        row = np.zeros(nv)
        m = int(leaf)
        while tree.parent[m] >= 0:
            p = int(tree.parent[m])
            row[col[p] * k:(col[p] + 1) * k] -= g @ dS[m]
            m = p
        row[-1] = 1.0
        A.append(row)
        b.append(x + s.endowment[leaf] - C[leaf])
    cost = np.zeros(nv)
    cost[-1] = -1.0
    bounds = [(0, None)] * (nv - 1) + [(None, 1e6)]
    res = linprog(cost, A_ub=np.array(A), b_ub=np.array(b), bounds=bounds, method="highs")
    if res.status != 0:
        raise SolverError(f"global financing LP failed: {res.message}")
    best = float(res.x[-1])
    return best >= -1e-9, best


# ---------------------------------------------------------------------------
# brute-force referee


@dataclass
class OracleResult:
    value: float
    c: np.ndarray
    evaluations: int


def brute_force_primal(
    s: MarketScenario,
    U: UtilityField,
    x: float,
    levels: int | None = None,
    refine: int = 3,
    max_grid: int = 200_000,
    weights=None,
    max_nodes: int = MAX_ORACLE_NODES,
) -> OracleResult:
    """Maximize the primal objective directly over budget-feasible plans.

    Feasibility is the vertex-reduced constraint set sum_n w_n Q^v_n c_n <=
    x + <Q^v, E_T> for every vertex v. Search: lattice grid (``levels`` points
    per node, by default as many as keep the lattice under ``max_grid``
    points), ``refine`` zoom rounds around the incumbent, then SLSQP and a
    compass polish. Uses neither dual variables nor the dual solver.
    """
    tree = s.tree
    w_all = s.node_weights if weights is None else np.asarray(weights, dtype=float)
    nodes = np.flatnonzero(w_all > 0)
    k = nodes.size
    if k > max_nodes:
        raise SizeGuardError(f"brute-force oracle limited to {max_nodes} charged nodes, got {k}")
    if levels is None:
        levels = max(3, int(max_grid ** (1.0 / max(k, 1))))
    poly = polytope(s)
    Vt = vertices(poly)
    Qv = (tree.incidence[nodes] @ Vt.T).T  # vertices x charged nodes
    A = Qv * w_all[nodes]
    b = x + Vt @ s.terminal_endowment
    P = tree.prob[nodes]
    wn = w_all[nodes]
    tn = tree.time_index[nodes]
    if np.any(b <= 0):
        raise SolverError("no strictly feasible consumption plan: x + <Q, E_T> <= 0 at some vertex")
    with np.errstate(divide="ignore"):
        cmax = np.array([np.min(b[A[:, j] > 0] / A[A[:, j] > 0, j]) if np.any(A[:, j] > 0) else np.inf for j in range(k)])
    if np.any(~np.isfinite(cmax)):
        raise SolverError("consumption unbounded at some charged node: primal value infinite")
    n_eval = 0

    def objective(C):
        nonlocal n_eval
        C = np.atleast_2d(C)
        n_eval += C.shape[0]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.asarray(U.u(tn, nodes, C), dtype=float)
        return (u * (P * wn)).sum(axis=1)

    def feasible(C):
        return np.all(np.atleast_2d(C) @ A.T <= b * (1 + 1e-13), axis=1)

    # the constant plan scaled to the tightest vertex budget is always feasible
    kappa = float(np.min(b / A.sum(axis=1)))
    best_c = np.full(k, kappa)
    best_v = float(objective(best_c)[0])
    lo, hi = cmax / (4.0 * k), cmax.copy()
    for r in range(refine + 1):
        axes = [np.geomspace(lo[j], hi[j], levels) if r == 0 else np.linspace(lo[j], hi[j], levels) for j in range(k)]
        for chunk in _grid_chunks(axes):
            ok = feasible(chunk)
            if not np.any(ok):
                continue
            vals = objective(chunk[ok])
            i = int(np.argmax(vals))
            if vals[i] > best_v:
                best_v, best_c = float(vals[i]), chunk[ok][i].copy()
        span = np.array([np.max(np.diff(a)) if a.size > 1 else 0.0 for a in axes])
        lo = np.maximum(best_c - span, 1e-12 * cmax)
        hi = np.minimum(best_c + span, cmax)
    scale = np.maximum(cmax, 1e-12)

    def f(z):
        return -float(objective(z * scale)[0])

    cons = {"type": "ineq", "fun": lambda z: b - A @ (z * scale), "jac": lambda z: -A * scale}
    starts = [best_c / scale, np.full(k, kappa) / scale]
    for z0 in starts:
        with warnings.catch_warnings():
            # SLSQP clips its trial points to the bounds and says so
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(f, z0, method="SLSQP", bounds=[(1e-14, 1.0)] * k, constraints=[cons], options={"ftol": 1e-15, "maxiter": 500})
        z = np.clip(res.x, 1e-14, 1.0)
        c = z * scale
        if feasible(c)[0]:
            v = float(objective(c)[0])
            if v > best_v:
                best_v, best_c = v, c
    best_c, best_v = _compass(best_c, best_v, objective, feasible, cmax)
    out = np.full(tree.n_nodes, np.nan)
    out[nodes] = best_c
    return OracleResult(best_v, out, n_eval)


def _grid_chunks(axes, chunk=200_000):
    sizes = [a.size for a in axes]
    total = int(np.prod(sizes))
    for start in range(0, total, chunk):
        idx = np.unravel_index(np.arange(start, min(total, start + chunk)), sizes)
        yield np.stack([axes[j][idx[j]] for j in range(len(axes))], axis=1)


def _compass(c, v, objective, feasible, cmax, rounds=60):
    """Pairwise-transfer and coordinate moves with shrinking steps; keeps feasibility."""
    k = c.size
    step = 0.05 * np.maximum(c, 1e-9)
    for _ in range(rounds):
        moves = []
        for i in range(k):
            e = np.zeros(k)
            e[i] = step[i]
            moves += [e, -e]
            for j in range(i + 1, k):
                d = np.zeros(k)
                d[i], d[j] = step[i], -step[j]
                moves += [d, -d]
        cand = np.clip(c + np.array(moves), 1e-14, cmax)
        ok = feasible(cand)
        improved = False
        if np.any(ok):
            vals = objective(cand[ok])
            i = int(np.argmax(vals))
            if vals[i] > v:
                c, v, improved = cand[ok][i], float(vals[i]), True
        if not improved:
            step *= 0.5
            if np.all(step < 1e-13 * np.maximum(c, 1.0)):
                break
    return c, v


def cumulative(s: MarketScenario, c, weights=None) -> np.ndarray:
    """Cumulative consumption from a per-node rate (NaN entries off the charged set are ignored)."""
    c = np.nan_to_num(np.asarray(c, dtype=float), nan=0.0)
    return cumulative_from_rate(s, c, weights)

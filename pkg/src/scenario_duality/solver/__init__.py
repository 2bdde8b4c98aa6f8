"""Dual solver, primal recovery and certificates, assembled by :func:`solve`."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import DegenerateDualError, SolverError
from ..market_model import MarketScenario, is_admissible_strategy
from ..utility import UtilityField
from .certificates import MinimaxReport, VIReport, minimax_check, variational_inequality_check
from .dual import (
    DualObjectiveEval,
    DualOptions,
    DualProblem,
    DualResult,
    dual_derivative,
    dual_value,
    match_y_to_x,
    solve_dual,
)
from .primal import (
    BudgetReport,
    FinancingResult,
    OracleResult,
    brute_force_primal,
    budget_check,
    cumulative,
    financing_lp,
    primal_value,
    recover_consumption,
    recover_portfolio,
)

log = logging.getLogger(__name__)

TOL_GAP = 1e-6
TOL_VI = 1e-7
TOL_BUDGET = 1e-7


@dataclass
class Solution:
    """Optimal plan for one initial wealth, with certificates.

    Node-indexed arrays use the tree's internal order; ``c_hat`` is NaN off
    the charged nodes and ``H_hat`` is zero at terminal nodes.
    """

    x: float
    y: float
    c_hat: np.ndarray
    q_hat: np.ndarray
    Y: np.ndarray
    H_hat: np.ndarray
    C: np.ndarray
    wealth: np.ndarray
    surplus: np.ndarray
    primal_value: float
    dual_value: float
    gap: float
    budget_slack: float
    vi_worst: float
    certificates: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.certificates.values())


def solve(
    s: MarketScenario,
    U: UtilityField,
    x: float,
    opts: DualOptions | None = None,
    weights=None,
    portfolio: bool = True,
) -> Solution:
    """match y to x, minimize the dual, recover consumption and hedge, certify.

    ``weights`` replaces the per-node mu weights (used for formulations whose
    objective weights are not a probability measure in time).
    """
    dp = DualProblem(s, U, weights)
    y, res = dp.match(x, opts)
    if np.any(res.Y <= 0):
        zero = res.Y <= 0
        if np.any(np.isinf(U.i(dp.t[zero], dp.nodes[zero], 1e-300))):
            raise DegenerateDualError("dual optimizer degenerate on support of mu")
    c = recover_consumption(s, U, y, res.q, weights)
    C = cumulative(s, c, weights)
    pv = primal_value(s, U, c, weights)
    vv = res.value
    gap = vv + x * y - pv
    budget = budget_check(s, C, x)
    vi = variational_inequality_check(s, U, y, res.q, weights)
    tree = s.tree
    if portfolio:
        fin = recover_portfolio(s, C, x, tol=1e-8)
        H, X, F = fin.H, fin.X, fin.F
        adm = bool(is_admissible_strategy(s, x, fin.strategy, tol_admiss=1e-8))
    else:
        H = np.zeros((tree.n_nodes, s.d))
        X = F = np.full(tree.n_nodes, np.nan)
        adm = True
    Y_all = tree.node_mass(res.q) / tree.prob
    budget_eq = float(np.sum(dp.w * (dp.Mc @ res.q) * c[dp.nodes])) - x - float(res.q @ dp.E)
    certs = {
        "gap": abs(gap) <= TOL_GAP * max(1.0, abs(pv)),
        "budget": budget.slack <= TOL_BUDGET * max(1.0, x),
        "budget_equality": abs(budget_eq) <= TOL_BUDGET * max(1.0, x),
        "variational_inequality": vi.worst <= TOL_VI,
        "admissible": adm,
    }
    if not certs["variational_inequality"]:
        log.warning("stationarity certificate fails over the domain alone (worst %.3g)", vi.worst)
    diag = dict(res.diagnostics)
    # a density pinned at the barrier would be where a nonincreasing multiplier D < 1 could matter
    near_zero = int(np.sum(res.Y <= 1e-9))
    diag["charged_near_zero_density"] = near_zero
    if near_zero:
        log.warning("dual optimizer puts (near) zero weight on %d charged node(s)", near_zero)
    diag.update(iterations=res.iterations, fw_gap=res.fw_gap, budget_equality=budget_eq, budget_method=budget.method)
    return Solution(
        x=float(x),
        y=y,
        c_hat=c,
        q_hat=res.q,
        Y=Y_all,
        H_hat=H,
        C=C,
        wealth=X,
        surplus=F,
        primal_value=pv,
        dual_value=vv,
        gap=gap,
        budget_slack=budget.slack,
        vi_worst=vi.worst,
        certificates=certs,
        diagnostics=diag,
    )


__all__ = [
    "BudgetReport",
    "DualObjectiveEval",
    "DualOptions",
    "DualProblem",
    "DualResult",
    "FinancingResult",
    "MinimaxReport",
    "OracleResult",
    "Solution",
    "VIReport",
    "brute_force_primal",
    "budget_check",
    "cumulative",
    "dual_derivative",
    "dual_value",
    "financing_lp",
    "match_y_to_x",
    "minimax_check",
    "primal_value",
    "recover_consumption",
    "recover_portfolio",
    "solve",
    "solve_dual",
    "variational_inequality_check",
]

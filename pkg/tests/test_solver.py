import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from scenario_duality.dual_domain import linear_min, polytope, vertices
from scenario_duality.errors import FinancingError, SolverError
from scenario_duality.market_model import Strategy, is_admissible_strategy, wealth_process
from scenario_duality.scenarios import build_no_short_sale, random_scenario
from scenario_duality.solver import (
    DualOptions,
    DualProblem,
    budget_check,
    cumulative,
    dual_derivative,
    dual_value,
    financing_lp,
    match_y_to_x,
    minimax_check,
    primal_value,
    recover_consumption,
    recover_portfolio,
    solve,
    solve_dual,
    variational_inequality_check,
)
from scenario_duality.utility import Log, Power


def test_gradient_and_hessian_by_finite_differences():
    inst = random_scenario(5)
    dp = DualProblem(inst.scenario, inst.field)
    q = dp.start()
    y = 0.8
    ev = dp.value(y, q)
    rng = np.random.default_rng(0)
    for _ in range(5):
        d = rng.normal(size=q.size)
        d -= d.mean()
        h = 1e-6
        fd = (dp.value(y, q + h * d).value - dp.value(y, q - h * d).value) / (2 * h)
        assert fd == pytest.approx(float(ev.gradient @ d), rel=1e-6, abs=1e-9)
        fd2 = (dp.value(y, q + h * d).gradient - dp.value(y, q - h * d).gradient) / (2 * h)
        np.testing.assert_allclose(fd2, dp.hessian(y, q) @ d, rtol=1e-5, atol=1e-7)


@pytest.mark.parametrize("seed", range(8))
def test_derivative_formula_by_finite_differences(seed):
    inst = random_scenario(seed)
    s, U = inst.scenario, inst.field
    dp = DualProblem(s, U)
    for y in (0.3, 1.0, 3.0):
        r = dp.solve(y)
        h = 1e-4 * y
        fd = (dp.solve(y + h, r.q).value - dp.solve(y - h, r.q).value) / (2 * h)
        assert dp.derivative(y, r.q) == pytest.approx(fd, rel=1e-5, abs=1e-8)


@pytest.mark.parametrize("seed", range(6))
def test_dual_minimum_is_global_over_vertices_and_random_points(seed):
    # J(y, .) is convex; its minimum must undercut every vertex and every random convex combination
    inst = random_scenario(seed, max_charged=10)
    s, U = inst.scenario, inst.field
    poly = polytope(s)
    V = vertices(poly)
    r = solve_dual(s, U, 1.0)
    rng = np.random.default_rng(seed)
    for lam in rng.dirichlet(np.ones(V.shape[0]), size=200):
        q = lam @ V
        assert dual_value(s, U, 1.0, q).value >= r.value - 1e-10 * max(1.0, abs(r.value))


@pytest.mark.parametrize("seed", range(6))
def test_optimizer_independent_of_start(seed):
    inst = random_scenario(seed, max_charged=10)
    s, U = inst.scenario, inst.field
    V = vertices(polytope(s))
    rng = np.random.default_rng(seed)
    dp = DualProblem(s, U)
    base = dp.solve(1.0)
    for _ in range(3):
        q0 = rng.dirichlet(np.ones(V.shape[0])) @ V
        r = dp.solve(1.0, q0)
        assert r.value == pytest.approx(base.value, rel=1e-11, abs=1e-11)
        # Y on charged nodes is unique (strict convexity of V); q itself may not be
        np.testing.assert_allclose(dp.density(r.q), dp.density(base.q), rtol=1e-6, atol=1e-9)


def test_one_period_no_short_sale_against_scalar_search():
    # terminal log utility, one period: maximize E log(x + H dS) over H >= 0 directly
    s = build_no_short_sale(1.3, 0.8, 0.5, 1)
    x = 1.0
    dS = s.price_increments[[1, 2], 0]
    p = s.tree.prob[[1, 2]]
    res = minimize_scalar(lambda H: -float(p @ np.log(x + H * dS)), bounds=(0.0, x / -dS.min() * (1 - 1e-9)), method="bounded", options={"xatol": 1e-12})
    sol = solve(s, Log(), x)
    assert sol.primal_value == pytest.approx(-res.fun, abs=1e-9)
    assert sol.H_hat[0, 0] == pytest.approx(res.x, abs=1e-5)


def test_one_period_short_sale_ban_binds():
    # down-drifting price: the unconstrained trader would short, the constrained one holds nothing
    s = build_no_short_sale(1.2, 0.7, 0.5, 1)
    sol = solve(s, Power(0.5), 2.0)
    assert sol.H_hat[0, 0] == pytest.approx(0.0, abs=1e-9)
    assert sol.primal_value == pytest.approx(2.0 * np.sqrt(2.0), rel=1e-12)
    np.testing.assert_allclose(sol.q_hat, [0.5, 0.5], atol=1e-12)  # P itself is a supermartingale measure


@pytest.mark.parametrize("seed", range(10))
def test_weak_duality(seed):
    # U(c) <= J(y, Q) + x y for every financeable c, every Q in D, y > 0
    inst = random_scenario(seed, max_charged=10)
    s, U, x = inst.scenario, inst.field, inst.x
    sol = solve(s, U, x, portfolio=False)
    V = vertices(polytope(s))
    rng = np.random.default_rng(seed)
    c_feasible = 0.5 * sol.c_hat  # E >= 0, so halving the optimal plan stays within budget
    assert budget_check(s, cumulative(s, np.nan_to_num(c_feasible)), x).slack <= 1e-9
    pv = primal_value(s, U, c_feasible)
    for _ in range(20):
        q = rng.dirichlet(np.ones(V.shape[0])) @ V
        y = float(np.exp(rng.uniform(-2, 2)))
        assert pv <= dual_value(s, U, y, q).value + x * y + 1e-10


def test_matching_inverts_derivative(binomial2):
    U = Power(0.3)
    for x in (0.2, 1.0, 7.5):
        y, r = match_y_to_x(binomial2, U, x)
        assert dual_derivative(binomial2, U, y, r.q) == pytest.approx(-x, abs=1e-10 * max(1, x))


def test_matching_rejects_unfinanceable_wealth(binomial):
    with pytest.raises(SolverError, match="threshold"):
        solve(binomial, Log(), 0.0)
    with pytest.raises(ValueError):
        match_y_to_x(binomial, Log(), -1.0)


def test_endowment_allows_zero_wealth(lakner):
    sol = solve(lakner, Log(), 0.0)
    assert sol.ok
    np.testing.assert_allclose(sol.c_hat[lakner.charged], [2.0, 1.0], atol=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_solution_certificates_and_hedge(seed):
    inst = random_scenario(seed)
    s, U, x = inst.scenario, inst.field, inst.x
    sol = solve(s, U, x)
    assert sol.ok, sol.certificates
    strat = Strategy(sol.H_hat, sol.C)
    assert is_admissible_strategy(s, x, strat, tol_admiss=1e-8)
    W = wealth_process(s, x, strat)
    # the optimal plan spends everything: terminal wealth vanishes under Q-hat
    assert float(sol.q_hat @ W[s.tree.paths]) == pytest.approx(0.0, abs=1e-8 * max(1, x))


def test_recover_consumption_and_vi(binomial, log_u):
    q = np.array([1 / 3, 2 / 3])
    c = recover_consumption(binomial, log_u, 1.0, q)
    assert np.isnan(c[0])
    np.testing.assert_allclose(c[1:], [1.5, 0.75], atol=1e-14)
    vi = variational_inequality_check(binomial, log_u, 1.0, q)
    assert vi.worst == pytest.approx(0.0, abs=1e-14)


def test_portfolio_rejects_overspending(binomial):
    C = cumulative(binomial, np.array([0.0, 1.6, 0.75]))
    with pytest.raises(FinancingError) as exc:
        recover_portfolio(binomial, C, 1.0)
    assert exc.value.shortfall > 0
    feasible, worst = financing_lp(binomial, C, 1.0)
    assert not feasible and worst < 0


def test_minimax_on_lakner_slud(lakner, log_u):
    y, _ = match_y_to_x(lakner, log_u, 0.0)
    rep = minimax_check(lakner, log_u, y)
    assert rep.exhaustive
    assert rep.difference <= 5e-3


def test_tolerance_option_is_respected(binomial2):
    U = Power(0.3)
    coarse = solve_dual(binomial2, U, 1.0, DualOptions(tol_opt=1e-4))
    fine = solve_dual(binomial2, U, 1.0)
    assert fine.fw_gap <= coarse.fw_gap + 1e-15
    assert fine.value <= coarse.value + 1e-15


def test_dual_derivative_limit_at_large_y(binomial2):
    # V'(y) -> min over D of <Q, E_T> as y -> inf
    U = Power(0.3)
    dp = DualProblem(binomial2, U)
    target = linear_min(dp.poly, dp.E)[0]
    prev = None
    for y in (1e2, 1e4, 1e6):
        r = dp.solve(y)
        err = abs(dp.derivative(y, r.q) - target)
        if prev is not None:
            assert err < prev
        prev = err
    assert prev <= 1e-6


@pytest.mark.parametrize("seed", range(6))
def test_surplus_process_nondecreasing(seed):
    inst = random_scenario(seed)
    s = inst.scenario
    sol = solve(s, inst.field, inst.x)
    F = sol.surplus
    par = s.tree.parent
    child = par >= 0
    assert np.all(F >= -1e-9)
    assert np.all(F[child] >= F[par[child]] - 1e-9)

"""Hand-checkable examples for every public operation, with their oracles."""

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from scenario_duality.dual_domain import (
    density_process,
    is_in_D,
    polytope,
    project_to_D,
    vertices,
)
from scenario_duality.errors import FinancingError, ScenarioError
from scenario_duality.io import load_scenario, shipped_fixtures
from scenario_duality.market_model import (
    ConsumptionMeasure,
    ConstraintCone,
    EventTree,
    MarketScenario,
    Strategy,
    cumulative_from_rate,
    is_admissible_strategy,
    validate_scenario,
    wealth_process,
)
from scenario_duality import report
from scenario_duality.scenarios import (
    build_complete_binomial,
    build_lakner_slud,
    build_mixed_consumption_terminal,
    build_no_short_sale,
)
from scenario_duality.solver import (
    DualProblem,
    brute_force_primal,
    budget_check,
    cumulative,
    dual_value,
    match_y_to_x,
    minimax_check,
    primal_value,
    recover_portfolio,
    solve,
    solve_dual,
    variational_inequality_check,
)
from scenario_duality.utility import Discounted, Log, Power, Scaled, minorant_majorant, numeric_conjugate

LOG = Log()


def one_period(probs=(0.5, 0.5), prices=(1.0, 2.0, 0.5), mu=(0.0, 1.0), E=(0.0, 0.0, 0.0), cone=None):
    tree = EventTree.from_nodes([0, 1, 2], [None, 0, 0], [0, 1, 1], [1.0, *probs], [0.0, 1.0])
    return MarketScenario(tree, np.array(prices), np.array(E), ConsumptionMeasure(list(mu)), cone or ConstraintCone.unconstrained(1), "t")


# -- market model -----------------------------------------------------------


def test_validation_examples():
    assert validate_scenario(one_period()).ok
    v = validate_scenario(one_period(probs=(0.6, 0.5))).violations
    assert any("sum" in m for m in v)
    v = validate_scenario(one_period(mu=(1.0, 0.0))).violations
    assert any("mu" in m or "μ" in m for m in v)


def test_wealth_examples():
    s = one_period()
    W = wealth_process(s, 1.0, Strategy(np.zeros((3, 1)), np.zeros(3)))
    np.testing.assert_array_equal(W, 1.0)
    W = wealth_process(s, 1.0, Strategy(np.array([[1.0], [0], [0]]), np.zeros(3)))
    assert (W[1], W[2]) == (2.0, 0.5)
    se = one_period(E=(0.0, 0.7, 0.2))
    W = wealth_process(se, 0.0, Strategy(np.zeros((3, 1)), se.endowment.copy()))
    np.testing.assert_array_equal(W[1:], 0.0)


def test_admissibility_examples():
    s = one_period()
    assert is_admissible_strategy(s, 1.0, Strategy(np.zeros((3, 1)), np.zeros(3)))
    ns = one_period(cone=ConstraintCone.nonnegative(1))
    rep = is_admissible_strategy(ns, 1.0, Strategy(np.array([[-1.0], [0], [0]]), np.zeros(3)))
    assert not rep and "cone" in rep.reason
    rep = is_admissible_strategy(s, 1.0, Strategy(np.array([[3.0], [0], [0]]), np.zeros(3)))
    assert not rep
    assert wealth_process(s, 1.0, Strategy(np.array([[3.0], [0], [0]]), np.zeros(3)))[2] == -0.5


def test_cumulative_examples():
    s = one_period(mu=(0.5, 0.5))
    np.testing.assert_array_equal(cumulative_from_rate(s, np.ones(3)), [0.5, 1.0, 1.0])
    np.testing.assert_array_equal(cumulative_from_rate(s, np.zeros(3)), 0.0)
    st = build_complete_binomial(2.0, 0.5, 0.5, 2)
    C = cumulative_from_rate(st, np.full(7, 1.3))
    np.testing.assert_array_equal(C[st.tree.time_index < 2], 0.0)
    np.testing.assert_array_equal(C[st.tree.paths], 1.3)


# -- dual domain -------------------------------------------------------------


def test_constraint_examples():
    full = polytope(build_complete_binomial(2.0, 0.5, 0.5, 1))
    np.testing.assert_allclose(full.A, [[1.0, -0.5], [-1.0, 0.5]])
    ns = polytope(build_no_short_sale(2.0, 0.5, 0.5, 1))
    np.testing.assert_allclose(ns.A, [[1.0, -0.5]])  # 1.5 q - 0.5 <= 0 after sum q = 1
    ls = polytope(build_lakner_slud(1.0))
    assert np.all(ls.A == 0)


def test_no_short_sale_two_periods_counts():
    poly = polytope(build_no_short_sale(2.0, 0.5, 0.5, 2))
    assert poly.n_paths == 4
    assert poly.A.shape[0] == 3  # one row per non-terminal node


def test_density_examples():
    s = build_complete_binomial(2.0, 0.5, 0.5, 1)
    np.testing.assert_allclose(density_process(s, [0.5, 0.5]), 1.0)
    np.testing.assert_allclose(density_process(s, [1 / 3, 2 / 3])[1:], [2 / 3, 4 / 3])
    s2 = build_complete_binomial(2.0, 0.5, 0.3, 2)
    q = np.zeros(4)
    q[2] = 1.0
    Y = density_process(s2, q)
    path = [0, 2, 5]  # root, down, down-up
    for n in path:
        assert Y[n] == pytest.approx(1.0 / s2.tree.prob[n])
    assert np.all(np.delete(Y, path) == 0)


def test_membership_examples():
    ls = polytope(build_lakner_slud(1.0))
    assert is_in_D(ls, [0.5, 0.5])
    ns = polytope(build_no_short_sale(2.0, 0.5, 0.5, 1))
    assert not is_in_D(ns, [0.5, 0.5])
    assert is_in_D(ns, [1 / 3, 2 / 3])


def test_vertex_examples():
    ns = polytope(build_no_short_sale(2.0, 0.5, 0.5, 1))
    np.testing.assert_allclose(vertices(ns), [[1 / 3, 2 / 3], [0.0, 1.0]], atol=1e-15)
    full = polytope(build_complete_binomial(2.0, 0.5, 0.5, 1))
    np.testing.assert_allclose(vertices(full), [[1 / 3, 2 / 3]])
    ls = polytope(build_lakner_slud(1.0, p=(0.2, 0.3, 0.5)))
    np.testing.assert_array_equal(vertices(ls), np.eye(3))


def test_projection_examples():
    ns = polytope(build_no_short_sale(2.0, 0.5, 0.5, 1))
    np.testing.assert_allclose(project_to_D(ns, [0.2, 0.8]), [0.2, 0.8], atol=1e-12)
    np.testing.assert_allclose(project_to_D(ns, [0.5, 0.5]), [1 / 3, 2 / 3], atol=1e-12)
    ls = polytope(build_lakner_slud(1.0, p=(0.2, 0.3, 0.5)))
    # sort-and-threshold oracle for (-0.2, 0.5, 0.9): theta = 0.2 on the top two
    np.testing.assert_allclose(project_to_D(ls, [-0.2, 0.5, 0.9]), [0.0, 0.3, 0.7], atol=1e-12)


# -- utility ------------------------------------------------------------------


def test_conjugate_examples():
    assert LOG.v(0, 0, 1.0) == pytest.approx(-1.0, abs=1e-15)
    assert Power(0.5).v(0, 0, 1.0) == pytest.approx(1.0, abs=1e-15)
    D = Discounted.exponential(LOG, 0.1, [0.0, 1.0])
    psi = np.exp(-0.1)
    # psi V_log(y / psi) = psi (-log(y/psi) - 1)
    assert D.v(1, 0, 1.0) == pytest.approx(psi * (-np.log(1 / psi) - 1), rel=1e-14)
    assert numeric_conjugate(D, 1, 0, 1.0) == pytest.approx(D.v(1, 0, 1.0), rel=1e-11)


def test_inverse_marginal_examples():
    assert LOG.i(0, 0, 2.0) == 0.5
    assert Power(0.5).i(0, 0, 4.0) == pytest.approx(1 / 16, rel=1e-15)
    for U in (LOG, Power(0.3), Discounted.exponential(Power(0.6), 0.2, [0, 1, 2]), Scaled(LOG, 3.0)):
        for x in (0.1, 1.0, 10.0):
            assert U.i(2, 0, U.du(2, 0, x)) == pytest.approx(x, rel=1e-10)


def test_sandwich_examples():
    lo, hi = minorant_majorant(Power(0.5))
    assert lo.u(3.0) == hi.u(3.0) == Power(0.5).u(0, 0, 3.0)
    D = Discounted(LOG, [1.0, 0.8, 0.6])
    dom = [(0, 0), (1, 1), (2, 3)]
    lo, hi = minorant_majorant(D, dom)
    assert lo.level == pytest.approx(min(D.u(t, n, 1.0) for t, n in dom))
    assert hi.level == pytest.approx(max(D.u(t, n, 1.0) for t, n in dom))
    x = np.logspace(-3, 3, 1000)
    y = np.logspace(-3, 3, 60)
    for t, n in dom:
        u = D.u(t, n, x)
        assert np.all(lo.u(x) <= u + 1e-10) and np.all(u <= hi.u(x) + 1e-10)
        v = D.v(t, n, y)
        assert np.all(lo.v(y) <= v + 1e-9) and np.all(v <= hi.v(y) + 1e-9)


# -- dual objective, optimizer, derivative, matching -------------------------------


def test_dual_value_examples():
    ls = build_lakner_slud(0.7, N=2)  # E_T = 0.7 on every path
    P = ls.tree.path_prob
    assert dual_value(ls, LOG, 1.0, P).value == pytest.approx(0.7 - 1.0, abs=1e-14)
    cb = build_complete_binomial(2.0, 0.5, 0.5, 1)
    J = dual_value(cb, LOG, 1.0, [1 / 3, 2 / 3]).value
    # 0.5 V(2/3) + 0.5 V(4/3); the primal value is J + x y
    assert J == pytest.approx(0.5 * (-np.log(2 / 3) - 1) + 0.5 * (-np.log(4 / 3) - 1), abs=1e-15)
    assert J + 1.0 == pytest.approx(0.0588915, abs=1e-7)
    assert dual_value(cb, LOG, 1.0, [1 / 3, 2 / 3]).value == J


def test_dual_optimizer_examples():
    cb = build_complete_binomial(2.0, 0.5, 0.5, 1)
    for y in (0.3, 1.0, 5.0):
        np.testing.assert_allclose(solve_dual(cb, LOG, y).q, [1 / 3, 2 / 3], atol=1e-14)
    # 2-node Lakner-Slud, E_T = (2, 1), mu = delta_T: 1-d grid search referee
    ls = build_lakner_slud([0.0, 2.0, 1.0])
    grid = np.linspace(1e-6, 1 - 1e-6, 1_000_001)
    J = 0.5 * (-np.log(grid / 0.5) - 1) + 0.5 * (-np.log((1 - grid) / 0.5) - 1) + 2 * grid + (1 - grid)
    q_ref = grid[np.argmin(J)]
    r = solve_dual(ls, LOG, 1.0)
    assert 0 < r.q[0] < 1
    assert r.q[0] == pytest.approx(q_ref, abs=1e-6)
    ns = build_no_short_sale(2.0, 0.5, 0.5, 1)
    np.testing.assert_allclose(solve_dual(ns, LOG, 1.0).q, [1 / 3, 2 / 3], atol=1e-12)


def test_dual_derivative_examples():
    cb = build_complete_binomial(2.0, 0.5, 0.5, 1)
    dp = DualProblem(cb, LOG)
    for y in (0.5, 1.0, 3.0):
        assert dp.derivative(y, dp.solve(y).q) == pytest.approx(-1 / y, rel=1e-13)
    e = 0.7
    ls = build_lakner_slud(e, N=2)
    dp = DualProblem(ls, LOG)
    for y in (0.5, 1.0, 3.0):
        assert dp.derivative(y, dp.solve(y).q) == pytest.approx(e - 1 / y, rel=1e-12)
    # large y: V'(y) sits in [min_D <Q,E>, max_D <Q,E>]
    ls2 = build_lakner_slud([0.0, 2.0, 1.0])
    dp = DualProblem(ls2, LOG)
    d = dp.derivative(1e6, dp.solve(1e6).q)
    assert 1.0 - 1e-5 <= d <= 2.0


def test_matching_examples():
    cb = build_complete_binomial(2.0, 0.5, 0.5, 1)
    assert match_y_to_x(cb, LOG, 1.0)[0] == pytest.approx(1.0, rel=1e-12)
    assert match_y_to_x(cb, LOG, 2.0)[0] == pytest.approx(0.5, rel=1e-12)
    e = 0.7
    ls = build_lakner_slud(e, N=2)
    for x in (0.0, 0.5, 3.0):
        assert match_y_to_x(ls, LOG, x)[0] == pytest.approx(1 / (x + e), rel=1e-12)


def test_consumption_examples():
    cb = build_complete_binomial(2.0, 0.5, 0.5, 1)
    sol = solve(cb, LOG, 1.0)
    np.testing.assert_allclose(sol.c_hat[1:], [1.5, 0.75], atol=1e-12)
    ls = build_lakner_slud(1.3, N=3)
    sol = solve(ls, LOG, 0.0)
    np.testing.assert_allclose(sol.c_hat[ls.charged], 1.3, atol=1e-12)
    np.testing.assert_allclose(sol.Y, 1.0, atol=1e-12)
    ns = build_no_short_sale(2.0, 0.5, 0.5, 1)
    sol = solve(ns, LOG, 1.0)
    np.testing.assert_allclose(sol.c_hat[1:], [1.5, 0.75], atol=1e-12)
    oracle = brute_force_primal(ns, LOG, 1.0)
    np.testing.assert_allclose(oracle.c[1:], [1.5, 0.75], atol=1e-5)


def test_budget_examples():
    cb = build_complete_binomial(2.0, 0.5, 0.5, 2)
    C = np.zeros(7)
    C[cb.tree.paths] = 1.0
    assert budget_check(cb, C, 1.0).slack == pytest.approx(0.0, abs=1e-14)
    ls = build_lakner_slud([0, 0.4, 0.9, 0.2, 0.3, 0.5, 0.1], N=2)
    assert budget_check(ls, ls.endowment.copy(), 0.0).slack == pytest.approx(0.0, abs=1e-14)
    cb1 = build_complete_binomial(2.0, 0.5, 0.5, 1)
    sol = solve(cb1, LOG, 1.0)
    rep = budget_check(cb1, sol.C, 1.0)
    assert rep.slack == pytest.approx(0.0, abs=1e-13)
    np.testing.assert_allclose(rep.q, [1 / 3, 2 / 3], atol=1e-14)


def test_portfolio_examples():
    cb = build_complete_binomial(2.0, 0.5, 0.5, 2)
    C = np.zeros(7)
    C[cb.tree.paths] = 1.0
    fin = recover_portfolio(cb, C, 1.0)
    np.testing.assert_allclose(fin.H, 0.0, atol=1e-9)  # node LPs solve to ~1e-12
    cb1 = build_complete_binomial(2.0, 0.5, 0.5, 1)
    fin = recover_portfolio(cb1, cumulative(cb1, np.array([0.0, 1.5, 0.75])), 1.0)
    assert fin.H[0, 0] == pytest.approx(0.5, abs=1e-12)
    # no hedging: admissibility is C_T <= x + E_T path by path
    ls = build_lakner_slud([0.0, 2.0, 1.0])
    ok = cumulative(ls, np.array([0.0, 2.4, 1.4]))
    fin = recover_portfolio(ls, ok, 0.5)
    np.testing.assert_allclose(fin.H, 0.0, atol=1e-9)
    with pytest.raises(FinancingError):
        recover_portfolio(ls, cumulative(ls, np.array([0.0, 2.4, 1.6])), 0.5)


def test_primal_value_examples():
    cb = build_complete_binomial(2.0, 0.5, 0.5, 1)
    assert primal_value(cb, LOG, np.array([np.nan, 1.5, 0.75])) == pytest.approx(0.0588915, abs=1e-7)
    assert primal_value(cb, Power(0.5), np.zeros(3)) == 0.0
    assert primal_value(cb, LOG, np.zeros(3)) == -np.inf


def test_variational_inequality_examples():
    cb = build_complete_binomial(2.0, 0.5, 0.5, 1)
    assert variational_inequality_check(cb, LOG, 1.0, [1 / 3, 2 / 3]).worst == pytest.approx(0.0, abs=1e-15)
    ns = build_no_short_sale(2.0, 0.5, 0.5, 1)
    sol = solve(ns, LOG, 1.0)
    V = vertices(polytope(ns))
    dp = DualProblem(ns, LOG)
    a = dp.Mc.T @ (dp.w * dp.consumption(sol.y, sol.q_hat)) - dp.E
    assert np.all(V @ a - a @ sol.q_hat <= 1e-12)


def test_minimax_examples():
    cb = build_complete_binomial(2.0, 0.5, 0.5, 1)
    rep = minimax_check(cb, LOG, 1.0, step=1e-2)
    assert rep.difference <= 1e-12
    ls = build_lakner_slud([0.0, 2.0, 1.0])
    rep = minimax_check(ls, LOG, 1.0, c_cap=4.0, step=1e-3)
    assert rep.difference <= 5e-3
    # inner sup at Q = P separates per node into the capped conjugate
    grid = np.arange(1, 4001) * 1e-3
    per_node = [np.max(np.log(grid) - 1.0 * grid) for _ in range(2)]
    assert per_node[0] == pytest.approx(LOG.v(1, 1, 1.0), abs=1e-12)


def test_solve_examples():
    base = build_complete_binomial(1.3, 0.8, 0.5, 2)
    mf = build_mixed_consumption_terminal(LOG, Power(0.5), base)
    a = solve(mf.scenario, mf.field, 1.0)
    b = solve(mf.scenario, mf.direct_field, 1.0, weights=mf.direct_weights)
    assert a.primal_value == pytest.approx(b.primal_value, abs=1e-8)
    cb = build_complete_binomial(2.0, 0.5, 0.5, 2)
    xs = [0.5, 1.0, 2.0, 4.0]
    vals = [solve(cb, Power(0.4), x, portfolio=False).primal_value for x in xs]
    slopes = np.diff(vals) / np.diff(xs)
    assert np.all(np.diff(vals) > 0) and np.all(np.diff(slopes) < 0)


def test_oracle_examples():
    cb = build_complete_binomial(2.0, 0.5, 0.5, 1)
    o = brute_force_primal(cb, LOG, 1.0, refine=3)
    assert o.value == pytest.approx(0.0588915, abs=1e-5)
    ns = build_no_short_sale(1.25, 0.9, 0.5, 2)
    U = Power(0.5)
    o = brute_force_primal(ns, U, 1.0)
    assert o.value >= primal_value(ns, U, np.zeros(7))
    dp = DualProblem(ns, U)
    for y in np.geomspace(0.2, 5.0, 9):
        assert o.value <= dp.solve(y).value + 1.0 * y + 1e-12


# -- scenarios ------------------------------------------------------------------


def test_builder_examples():
    np.testing.assert_allclose(vertices(polytope(build_complete_binomial(2.0, 0.5, 0.5, 1))), [[1 / 3, 2 / 3]])
    s = build_complete_binomial(1.1, 0.9, 0.5, 1)
    sol = solve(s, LOG, 1.0)
    np.testing.assert_allclose(sol.q_hat, [0.5, 0.5], atol=1e-14)
    np.testing.assert_allclose(sol.Y, 1.0, atol=1e-14)
    with pytest.raises(ScenarioError):
        build_complete_binomial(2.0, 1.0, 0.5, 1)
    ns = polytope(build_no_short_sale(2.0, 0.5, 0.5, 1))
    assert ns.A.shape[0] == 1
    full = build_no_short_sale(2.0, 0.5, 0.5, 1).with_cone(ConstraintCone.unconstrained(1))
    np.testing.assert_allclose(vertices(polytope(full)), [[1 / 3, 2 / 3]])


def test_lakner_slud_builder_examples():
    ls = build_lakner_slud([0.0, 2.0, 1.0])
    sol = solve(ls, LOG, 0.0)
    assert 0 < sol.q_hat[0] < 1
    with pytest.raises(ScenarioError):
        build_lakner_slud(0.0, N=2)


def test_mixed_builder_examples():
    base = build_complete_binomial(2.0, 0.5, 0.5, 2, time_grid=[0.0, 0.5, 1.0])
    T = 1.0
    x = np.geomspace(0.1, 10, 7)
    mf = build_mixed_consumption_terminal(LOG, LOG, base)
    # 2T log(x / 2T) = 2T log x + const: still log up to an affine change
    d = mf.field.u(0, 0, x) - 2 * T * np.log(x)
    np.testing.assert_allclose(d, d[0], atol=1e-13)
    d = mf.field.u(2, 3, x) - 2 * np.log(x)
    np.testing.assert_allclose(d, d[0], atol=1e-13)
    a = 0.4
    mf = build_mixed_consumption_terminal(Power(a), Power(a), base)
    # 2T (x / 2T)^a / a = (2T)^(1-a) x^a / a
    np.testing.assert_allclose(mf.field.u(0, 0, x), (2 * T) ** (1 - a) * x**a / a, rtol=1e-14)
    np.testing.assert_allclose(mf.field.u(2, 3, x), 2 ** (1 - a) * x**a / a, rtol=1e-14)


# -- files and reports ----------------------------------------------------------------


def test_fixture_examples(tmp_path):
    s, U = load_scenario(shipped_fixtures()["complete_binomial_log"])
    assert s.tree.n_nodes == 3
    bad = tmp_path / "neg.scn"
    bad.write_text(shipped_fixtures()["complete_binomial_log"].read_text().replace("cond_prob: 0.5}", "cond_prob: -0.5}", 1))
    with pytest.raises(ScenarioError, match=r"tree\.nodes\[1\]\.cond_prob"):
        load_scenario(bad)


def test_run_examples(tmp_path):
    cb = build_complete_binomial(2.0, 0.5, 0.5, 1)
    out = report.run(cb, LOG, [0.5, 1.0, 2.0], tmp_path, figures=False)
    rows = (tmp_path / "summary.csv").read_text().strip().split("\n")
    assert len(rows) == 4
    assert all(abs(sol.gap) <= 1e-6 for sol in out.solutions)
    ls = build_lakner_slud(1.3, N=2)
    out = report.run(ls, LOG, [0.0], tmp_path / "ls", figures=False)
    c = out.solutions[0].c_hat[ls.charged]
    np.testing.assert_allclose(c, c[0], atol=1e-12)


def test_sweep_examples(tmp_path):
    cb = build_complete_binomial(2.0, 0.5, 0.5, 1)
    res = report.sweep(cb, LOG, [0.5, 1.0, 2.0, 4.0], [0.25, 1.0, 4.0], tmp_path, figures=False)
    for x, U, dU, _ in res.x_rows:
        assert dU * x == pytest.approx(1.0, abs=1e-6)
        assert U == pytest.approx(0.0588915178281917 + np.log(x), abs=1e-12)
    for name, (s, U) in shipped_fixtures_loaded().items():
        r = report.sweep(s, U, [0.5, 1.0, 2.0, 4.0], [0.25, 1.0, 4.0], tmp_path / name, figures=False)
        assert all(r.flags.values()), (name, r.flags)


def shipped_fixtures_loaded():
    return {k: load_scenario(p) for k, p in shipped_fixtures().items()}

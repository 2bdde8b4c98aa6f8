"""Canonical scenario builders and a seeded generator of small random instances."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ArbitrageError, ScenarioError, UtilityError
from .market_model import (
    ConsumptionMeasure,
    ConstraintCone,
    EventTree,
    MarketScenario,
    validate_scenario,
)
from .utility import Discounted, Log, Mixed, Power, Scaled, UtilityField, check_field


def _lattice_prices(tree: EventTree, u: float, d: float, S0: float) -> np.ndarray:
    # first child of every node is the up move
    S = np.empty(tree.n_nodes)
    root = int(np.flatnonzero(tree.parent < 0)[0])
    S[root] = S0
    for n in range(tree.n_nodes):
        for k, c in enumerate(tree.children[n]):
            S[c] = S[n] * (u if k == 0 else d)
    return S


def _checked(s: MarketScenario) -> MarketScenario:
    validate_scenario(s).raise_if_failed()
    return s


def _binomial(u, d, p, N, S0, cone, mu, endowment, time_grid, name):
    if not d < 1.0 < u:
        raise ArbitrageError(f"binomial parameters need d < 1 < u, got u={u}, d={d}")
    if not 0.0 < p < 1.0:
        raise ScenarioError(f"up probability must lie in (0, 1), got {p}")
    tree = EventTree.uniform_branching([p, 1.0 - p], N, time_grid)
    S = _lattice_prices(tree, u, d, S0)
    mu = ConsumptionMeasure.terminal(N) if mu is None else ConsumptionMeasure(mu)
    E = np.zeros(tree.n_nodes) if endowment is None else np.asarray(endowment, dtype=float)
    return _checked(MarketScenario(tree, S, E, mu, cone, name))


def build_complete_binomial(
    u: float, d: float, p: float, N: int, S0: float = 1.0, mu=None, endowment=None, time_grid=None
) -> MarketScenario:
    """N-period binomial tree with unconstrained trading; one-step martingale weight (1-d)/(u-d)."""
    return _binomial(u, d, p, N, S0, ConstraintCone.unconstrained(1), mu, endowment, time_grid, "complete_binomial")


def build_no_short_sale(
    u: float, d: float, p: float, N: int, S0: float = 1.0, mu=None, endowment=None, time_grid=None
) -> MarketScenario:
    """Binomial tree with holdings restricted to H >= 0."""
    return _binomial(u, d, p, N, S0, ConstraintCone.nonnegative(1), mu, endowment, time_grid, "no_short_sale")


def build_lakner_slud(endowment_rates, p: Sequence[float] = (0.5, 0.5), N: int = 1, time_grid=None) -> MarketScenario:
    """No hedging (constant price), endowment accrued from a node-wise rate.

    The rate is paid at grid points t_1..t_N with weight 1/N each (right
    endpoints), and mu puts the same weights there, so the cumulative
    endowment is E(t_i) = sum_{1<=j<=i} eps(t_j) / N and the dual domain is the
    whole simplex. ``endowment_rates`` is a scalar (constant rate) or one value
    per node in internal order; the root value is ignored.
    """
    tree = EventTree.uniform_branching(list(p), N, time_grid)
    rates = np.broadcast_to(np.asarray(endowment_rates, dtype=float), (tree.n_nodes,)).copy()
    root = int(np.flatnonzero(tree.parent < 0)[0])
    rates[root] = 0.0
    if np.any(rates < 0) or np.any(~np.isfinite(rates)):
        raise ScenarioError("endowment rates must be finite and nonnegative")
    E = np.zeros(tree.n_nodes)
    for n in range(tree.n_nodes):
        par = tree.parent[n]
        if par >= 0:
            E[n] = E[par] + rates[n] / N
    if np.any(E[tree.paths] <= 0):
        raise ScenarioError("zero total endowment on some path: terminal endowment must be positive")
    w = np.full(N + 1, 1.0 / N)
    w[0] = 0.0
    S = np.ones(tree.n_nodes)
    return _checked(MarketScenario(tree, S, E, ConsumptionMeasure(w), ConstraintCone.unconstrained(1), "lakner_slud"))


@dataclass
class MixedFormulation:
    """Consumption-plus-terminal-wealth problem in two equivalent forms.

    Embedded: ``scenario`` (mu = running part over the grid plus 1/2 at T) with
    the single field ``field``. Direct: the same tree with objective weights
    ``direct_weights`` (dt before T, 1 at T) and the unscaled ``direct_field``.
    """

    scenario: MarketScenario
    field: UtilityField
    direct_field: UtilityField
    direct_weights: np.ndarray
    horizon: float

    def to_direct(self, c_hat: np.ndarray) -> np.ndarray:
        """Map an embedded consumption rate to (running rate, terminal wealth) per node."""
        tree = self.scenario.tree
        out = np.asarray(c_hat, dtype=float).copy()
        term = tree.time_index == tree.horizon_index
        out[~term] = out[~term] / (2.0 * self.horizon)
        out[term] = out[term] / 2.0
        return out


def build_mixed_consumption_terminal(U1: UtilityField, U2: UtilityField, base: MarketScenario) -> MixedFormulation:
    """Embed running utility U1 and terminal utility U2 into one field on ``base``'s tree.

    mu gives dt/(2T) to each grid point before T (left endpoints) and 1/2 to T.
    The field is 2T U1(x / 2T) before T and 2 U2(x / 2) at T.
    """
    for name, U in (("U1", U1), ("U2", U2)):
        chk = check_field(U)
        if not chk.ok:
            raise UtilityError(f"{name} fails the utility checks: {chk.failures[:3]}")
    tree = base.tree
    N = tree.horizon_index
    tg = tree.time_grid
    T = float(tg[-1] - tg[0])
    dt = np.diff(tg)
    w = np.r_[dt / (2.0 * T), 0.5]
    s = _checked(base.with_mu(ConsumptionMeasure(w), name=f"{base.name}_mixed"))
    field = Mixed(Scaled(U1, 2.0 * T), Scaled(U2, 2.0), N)
    chk = check_field(field, [(t, 0) for t in range(N + 1)])
    if not chk.ok:
        raise UtilityError(f"embedded field fails the utility checks: {chk.failures[:3]}")
    direct_w = np.r_[dt, 1.0][tree.time_index]
    return MixedFormulation(s, field, Mixed(U1, U2, N), direct_w, T)


# ---------------------------------------------------------------------------
# random instances


@dataclass
class RandomInstance:
    scenario: MarketScenario
    field: UtilityField
    x: float
    seed: int


def random_scenario(
    seed: int,
    max_periods: int = 3,
    max_branches: int = 3,
    max_charged: int | None = None,
    max_tries: int = 200,
) -> RandomInstance:
    """Small random tree with one asset, a random cone, utility, mu and endowment.

    Every non-terminal node gets 2..max_branches children with price moves of
    both signs, so every cone in {R, R+, -R+} leaves a strictly positive
    dual member. Draws are repeated until the charged-node count fits.
    """
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        N = int(rng.integers(1, max_periods + 1))
        ids, parents, tidx, probs = [0], [None], [0], [1.0]
        S = [1.0]
        frontier = [0]
        for t in range(1, N + 1):
            nxt = []
            for par in frontier:
                k = int(rng.integers(2, max_branches + 1))
                pr = rng.dirichlet(np.full(k, 2.0))
                pr = np.maximum(pr, 0.05)
                pr /= pr.sum()
                moves = rng.uniform(0.05, 0.6, size=k)
                signs = np.ones(k)
                signs[: int(rng.integers(1, k))] = -1.0
                rng.shuffle(signs)
                for j in range(k):
                    nid = len(ids)
                    ids.append(nid)
                    parents.append(par)
                    tidx.append(t)
                    probs.append(float(pr[j]))
                    S.append(S[par] * (1.0 + signs[j] * moves[j]))
                    nxt.append(nid)
            frontier = nxt
        grid = np.cumsum(np.r_[0.0, rng.uniform(0.5, 1.5, size=N)])
        tree = EventTree.from_nodes(ids, parents, tidx, probs, grid)
        # from_nodes keeps input order within a time level, which is already level order
        S = np.asarray(S)
        support = [N] + [t for t in range(N) if rng.random() < 0.5]
        w = np.zeros(N + 1)
        w[support] = rng.uniform(0.2, 1.0, size=len(support))
        w /= w.sum()
        mu = ConsumptionMeasure(w)
        inc = rng.uniform(0.0, 0.5, size=tree.n_nodes) * (rng.random() < 0.7)
        E = np.zeros(tree.n_nodes)
        for n in range(1, tree.n_nodes):
            E[n] = E[tree.parent[n]] + inc[n]
        cone = [ConstraintCone.unconstrained(1), ConstraintCone.nonnegative(1), ConstraintCone(np.array([[-1.0]]))][
            int(rng.integers(0, 3))
        ]
        s = MarketScenario(tree, S, E, mu, cone, f"random_{seed}")
        if max_charged is not None and s.charged.size > max_charged:
            continue
        if not validate_scenario(s).ok:
            continue
        kind = int(rng.integers(0, 4))
        if kind == 0:
            U = Log()
        elif kind == 1:
            U = Power(float(rng.uniform(0.2, 0.8)))
        elif kind == 2:
            U = Discounted.exponential(Log(), float(rng.uniform(0.05, 0.5)), grid)
        else:
            U = Discounted.exponential(Power(float(rng.uniform(0.2, 0.8))), float(rng.uniform(0.05, 0.5)), grid)
        x = float(rng.uniform(0.5, 2.0))
        return RandomInstance(s, U, x, seed)
    raise ScenarioError(f"no admissible random scenario after {max_tries} draws (seed {seed})")


BUILDERS = {
    "complete_binomial": build_complete_binomial,
    "no_short_sale": build_no_short_sale,
    "lakner_slud": build_lakner_slud,
}


def build(tag: str, **params) -> MarketScenario:
    """Builder lookup by tag, as used by scenario files and the CLI."""
    if tag not in BUILDERS:
        raise ScenarioError(f"unknown builder {tag!r}; known: {sorted(BUILDERS)}")
    return BUILDERS[tag](**params)

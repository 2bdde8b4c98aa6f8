"""Finite event-tree market: tree, prices, endowment, consumption measure, cone.

Nodes are stored in an internal order where every parent precedes its
children (sorted by time index, ties kept in input order). The original node
identifiers survive as ``EventTree.labels`` and are what every report prints.
Terminal nodes additionally get a depth-first ordering (``EventTree.paths``)
so that the terminal descendants of any node form a contiguous slice
``paths[lo[n]:hi[n]]``; dual measures live in that path coordinate system.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Sequence

import numpy as np
from scipy.optimize import nnls

from .errors import ScenarioError

TOL_CONE = 1e-9
TOL_ADMISS = 1e-9
TOL_PROB = 1e-12


@dataclass(frozen=True, eq=False)
class EventTree:
    """Finite filtered probability space as a rooted tree.

    Attributes:
        parent: parent index per node, -1 for the root.
        time_index: 0..N per node.
        cond_prob: probability of reaching the node from its parent (1 at the root).
        time_grid: strictly increasing times t_0 = 0 < ... < t_N = T.
        labels: external node identifiers, aligned with the internal order.
    """

    parent: np.ndarray
    time_index: np.ndarray
    cond_prob: np.ndarray
    time_grid: np.ndarray
    labels: tuple

    @classmethod
    def from_nodes(
        cls,
        ids: Sequence[Any],
        parents: Sequence[Any],
        time_indices: Sequence[int],
        cond_probs: Sequence[float],
        time_grid: Sequence[float],
    ) -> "EventTree":
        """Build a tree from per-node records keyed by arbitrary ids.

        Raises ScenarioError for structural defects: duplicate ids, orphans
        (unknown parent), missing or multiple roots, cycles, and time-index
        gaps between parent and child.
        """
        ids = list(ids)
        n = len(ids)
        if not (len(parents) == len(time_indices) == len(cond_probs) == n):
            raise ScenarioError("node field arrays have different lengths")
        if n == 0:
            raise ScenarioError("tree has no nodes")
        pos = {}
        for i, nid in enumerate(ids):
            if nid in pos:
                raise ScenarioError(f"duplicate node id {nid!r}")
            pos[nid] = i
        errs = []
        roots = [ids[i] for i in range(n) if parents[i] is None]
        if len(roots) != 1:
            errs.append(f"expected exactly one root, found {len(roots)}: {roots!r}")
        par = np.full(n, -1, dtype=int)
        for i in range(n):
            p = parents[i]
            if p is None:
                continue
            if p not in pos:
                errs.append(f"orphan node {ids[i]!r}: parent {p!r} does not exist")
                continue
            par[i] = pos[p]
        tidx = np.asarray(time_indices, dtype=int)
        for i in range(n):
            if par[i] < 0:
                if tidx[i] != 0:
                    errs.append(f"root {ids[i]!r} has time_index {tidx[i]} != 0")
            elif tidx[i] != tidx[par[i]] + 1:
                errs.append(
                    f"time-index gap at node {ids[i]!r}: {tidx[i]} after parent "
                    f"{ids[par[i]]!r} at {tidx[par[i]]}"
                )
        if errs:
            raise ScenarioError("; ".join(errs), errs)
        # parents precede children once sorted by time index (cycles are
        # impossible after the gap check)
        order = sorted(range(n), key=lambda i: (tidx[i], i))
        new = {old: k for k, old in enumerate(order)}
        parent = np.array([new[par[i]] if par[i] >= 0 else -1 for i in order], dtype=int)
        return cls(
            parent=parent,
            time_index=tidx[order].copy(),
            cond_prob=np.asarray(cond_probs, dtype=float)[order].copy(),
            time_grid=np.asarray(time_grid, dtype=float).copy(),
            labels=tuple(ids[i] for i in order),
        )

    @classmethod
    def uniform_branching(
        cls, branch_probs: Sequence[float], n_periods: int, time_grid: Sequence[float] | None = None
    ) -> "EventTree":
        """Non-recombining tree in which every node has the same conditional branch probabilities."""
        branch_probs = list(branch_probs)
        if time_grid is None:
            time_grid = np.arange(n_periods + 1, dtype=float)
        ids, parents, tidx, probs = [0], [None], [0], [1.0]
        frontier = [0]
        for t in range(1, n_periods + 1):
            nxt = []
            for p in frontier:
                for b in branch_probs:
                    nid = len(ids)
                    ids.append(nid)
                    parents.append(p)
                    tidx.append(t)
                    probs.append(b)
                    nxt.append(nid)
            frontier = nxt
        return cls.from_nodes(ids, parents, tidx, probs, time_grid)

    @property
    def n_nodes(self) -> int:
        return len(self.parent)

    @property
    def horizon_index(self) -> int:
        return len(self.time_grid) - 1

    @property
    def horizon(self) -> float:
        return float(self.time_grid[-1])

    @cached_property
    def children(self) -> tuple:
        ch = [[] for _ in range(self.n_nodes)]
        for i, p in enumerate(self.parent):
            if p >= 0:
                ch[p].append(i)
        return tuple(tuple(c) for c in ch)

    @cached_property
    def prob(self) -> np.ndarray:
        """Unconditional probability P(node event)."""
        pr = np.empty(self.n_nodes)
        for i, p in enumerate(self.parent):
            pr[i] = self.cond_prob[i] if p < 0 else pr[p] * self.cond_prob[i]
        return pr

    @cached_property
    def _dfs(self):
        paths, lo, hi = [], np.zeros(self.n_nodes, dtype=int), np.zeros(self.n_nodes, dtype=int)
        root = int(np.flatnonzero(self.parent < 0)[0])
        stack = [(root, False)]
        while stack:
            n, done = stack.pop()
            if done:
                hi[n] = len(paths)
                continue
            lo[n] = len(paths)
            if not self.children[n]:
                paths.append(n)
                hi[n] = len(paths)
                continue
            stack.append((n, True))
            for c in reversed(self.children[n]):
                stack.append((c, False))
        return np.array(paths, dtype=int), lo, hi

    @property
    def paths(self) -> np.ndarray:
        """Terminal node indices in depth-first order (the coordinates of a dual measure)."""
        return self._dfs[0]

    @property
    def path_lo(self) -> np.ndarray:
        return self._dfs[1]

    @property
    def path_hi(self) -> np.ndarray:
        return self._dfs[2]

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    @cached_property
    def nonterminal(self) -> np.ndarray:
        return np.array([i for i in range(self.n_nodes) if self.children[i]], dtype=int)

    @cached_property
    def path_prob(self) -> np.ndarray:
        return self.prob[self.paths]

    @cached_property
    def incidence(self) -> np.ndarray:
        """0/1 matrix (nodes x paths): entry 1 when the path passes through the node."""
        m = np.zeros((self.n_nodes, self.n_paths))
        for n in range(self.n_nodes):
            m[n, self.path_lo[n]:self.path_hi[n]] = 1.0
        return m

    @cached_property
    def ancestors(self) -> tuple:
        """Per node, the tuple of nodes on the root-to-node path (inclusive)."""
        out = []
        for i, p in enumerate(self.parent):
            out.append((i,) if p < 0 else out[p] + (i,))
        return tuple(out)

    def index_of(self, label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(f"unknown node id {label!r}") from None

    def node_mass(self, q: np.ndarray) -> np.ndarray:
        """Q(node event) for a vector of terminal weights in path coordinates."""
        c = np.concatenate([[0.0], np.cumsum(q)])
        return c[self.path_hi] - c[self.path_lo]


@dataclass(frozen=True, eq=False)
class ConsumptionMeasure:
    """Discrete utility measure mu on the time grid: one weight per grid point."""

    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))

    @classmethod
    def terminal(cls, n_periods: int) -> "ConsumptionMeasure":
        w = np.zeros(n_periods + 1)
        w[-1] = 1.0
        return cls(w)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    def violations(self) -> list[str]:
        w = self.weights
        out = []
        if np.any(w < 0):
            out.append(f"mu has negative weights at indices {np.flatnonzero(w < 0).tolist()}")
        if abs(w.sum() - 1.0) > TOL_PROB:
            out.append(f"mu weights sum to {w.sum():.17g}, not 1")
        partial = np.cumsum(w)[:-1]
        bad = np.flatnonzero(partial >= 1.0 - TOL_PROB)
        if bad.size:
            out.append(f"mu([0,t])<1 violated at t<T (time indices {bad.tolist()})")
        return out


@dataclass(frozen=True, eq=False)
class ConstraintCone:
    """Closed convex cone given as the conic hull of finitely many generators (rows)."""

    generators: np.ndarray

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.generators, dtype=float))
        object.__setattr__(self, "generators", g)

    @classmethod
    def unconstrained(cls, d: int) -> "ConstraintCone":
        eye = np.eye(d)
        return cls(np.vstack([eye, -eye]))

    @classmethod
    def nonnegative(cls, d: int) -> "ConstraintCone":
        return cls(np.eye(d))

    @property
    def dim(self) -> int:
        return self.generators.shape[1]

    def distance(self, h) -> float:
        """Euclidean distance from h to the cone (nonnegative least squares)."""
        h = np.atleast_1d(np.asarray(h, dtype=float))
        _, res = nnls(self.generators.T, h)
        return float(res)

    def contains(self, h, tol: float = TOL_CONE) -> bool:
        return self.distance(h) <= tol


@dataclass(frozen=True, eq=False)
class MarketScenario:
    """Tree plus discounted prices, cumulative endowment, utility measure and cone.

    ``prices`` is (n_nodes, d) and ``endowment`` is (n_nodes,), both in the
    tree's internal node order.
    """

    tree: EventTree
    prices: np.ndarray
    endowment: np.ndarray
    mu: ConsumptionMeasure
    cone: ConstraintCone
    name: str = field(default="scenario")

    def __post_init__(self):
        p = np.asarray(self.prices, dtype=float)
        if p.ndim == 1:
            p = p[:, None]
        object.__setattr__(self, "prices", p)
        object.__setattr__(self, "endowment", np.asarray(self.endowment, dtype=float))
        if p.shape[0] != self.tree.n_nodes:
            raise ScenarioError(f"prices has {p.shape[0]} rows for {self.tree.n_nodes} nodes")
        if self.endowment.shape != (self.tree.n_nodes,):
            raise ScenarioError(f"endowment has shape {self.endowment.shape}, expected ({self.tree.n_nodes},)")
        if len(self.mu.weights) != len(self.tree.time_grid):
            raise ScenarioError(
                f"mu has {len(self.mu.weights)} weights for {len(self.tree.time_grid)} time points"
            )
        if self.cone.dim != p.shape[1]:
            raise ScenarioError(f"cone generators have dimension {self.cone.dim}, prices have {p.shape[1]}")

    @property
    def d(self) -> int:
        return self.prices.shape[1]

    @cached_property
    def price_increments(self) -> np.ndarray:
        """S(node) - S(parent); zero at the root."""
        inc = np.zeros_like(self.prices)
        par = self.tree.parent
        nz = par >= 0
        inc[nz] = self.prices[nz] - self.prices[par[nz]]
        return inc

    @cached_property
    def node_weights(self) -> np.ndarray:
        """mu weight of the time index of each node."""
        return self.mu.weights[self.tree.time_index]

    @cached_property
    def charged(self) -> np.ndarray:
        """Indices of nodes whose time carries positive mu weight."""
        return np.flatnonzero(self.node_weights > 0)

    @property
    def terminal_endowment(self) -> np.ndarray:
        """Cumulative endowment at terminal nodes, in path coordinates."""
        return self.endowment[self.tree.paths]

    def with_mu(self, mu: ConsumptionMeasure, name: str | None = None) -> "MarketScenario":
        return MarketScenario(self.tree, self.prices, self.endowment, mu, self.cone, name or self.name)

    def with_cone(self, cone: ConstraintCone, name: str | None = None) -> "MarketScenario":
        return MarketScenario(self.tree, self.prices, self.endowment, self.mu, cone, name or self.name)


@dataclass(frozen=True, eq=False)
class Strategy:
    """Holdings H per node (used over the step to each child) and cumulative consumption C."""

    H: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        if H.ndim == 1:
            H = H[:, None]
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "C", np.asarray(self.C, dtype=float))


@dataclass
class ValidationReport:
    violations: list[str]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def raise_if_failed(self) -> None:
        if self.violations:
            from .errors import ArbitrageError

            cls = ArbitrageError if any("no-arbitrage" in v for v in self.violations) else ScenarioError
            raise cls("invalid scenario: " + "; ".join(self.violations), self.violations)


@dataclass
class AdmissibilityReport:
    admissible: bool
    reason: str = ""
    node: Any = None

    def __bool__(self) -> bool:
        return self.admissible


def validate_scenario(s: MarketScenario) -> ValidationReport:
    """Check the standing hypotheses of the market model; return every violated invariant."""
    from .dual_domain import strictly_positive_member

    tree = s.tree
    out = []
    tg = tree.time_grid
    if tg.size < 2 or tg[0] != 0.0 or np.any(np.diff(tg) <= 0):
        out.append("time grid must start at 0 and be strictly increasing with at least two points")
    N = tree.horizon_index
    lab = tree.labels
    for n in range(tree.n_nodes):
        ch = tree.children[n]
        if not ch:
            if tree.time_index[n] != N:
                out.append(f"terminal node {lab[n]!r} at time index {tree.time_index[n]} != N={N}")
            continue
        cp = tree.cond_prob[list(ch)]
        if np.any(cp <= 0):
            out.append(f"node {lab[n]!r}: children must have strictly positive cond_prob")
        if abs(cp.sum() - 1.0) > TOL_PROB:
            out.append(f"node {lab[n]!r}: children's probabilities sum {cp.sum():.17g} != 1")
    if np.any(tree.time_index > N):
        out.append("node time index beyond the time grid")
    E = s.endowment
    root = int(np.flatnonzero(tree.parent < 0)[0])
    if E[root] != 0.0:
        out.append(f"endowment at root is {E[root]:.17g}, must be 0")
    if np.any(~np.isfinite(E)) or np.any(~np.isfinite(s.prices)):
        out.append("prices and endowment must be finite")
    par = tree.parent
    dec = [lab[i] for i in range(tree.n_nodes) if par[i] >= 0 and E[i] < E[par[i]] - TOL_PROB]
    if dec:
        out.append(f"endowment decreasing along a path at nodes {dec!r}")
    out.extend(s.mu.violations())
    if not out:
        q = strictly_positive_member(s)
        if q is None or np.any(q <= 0):
            out.append("no-arbitrage: no strictly positive supermartingale measure (empty D-interior)")
    return ValidationReport(out)


def wealth_process(s: MarketScenario, x: float, strat: Strategy) -> np.ndarray:
    """W_n = x + E_n + sum of H_parent . dS along the path - C_n."""
    tree = s.tree
    if strat.H.shape != (tree.n_nodes, s.d) or strat.C.shape != (tree.n_nodes,):
        raise ScenarioError(
            f"strategy shapes H{strat.H.shape}, C{strat.C.shape} do not match "
            f"({tree.n_nodes}, {s.d}) and ({tree.n_nodes},)"
        )
    gains = np.zeros(tree.n_nodes)
    dS = s.price_increments
    for n in range(tree.n_nodes):
        p = tree.parent[n]
        if p >= 0:
            gains[n] = gains[p] + float(strat.H[p] @ dS[n])
    return x + s.endowment + gains - strat.C


def is_admissible_strategy(
    s: MarketScenario, x: float, strat: Strategy, tol_admiss: float = TOL_ADMISS, tol_cone: float = TOL_CONE
) -> AdmissibilityReport:
    """Cone membership of H at every non-terminal node and W_T >= -tol at every terminal node."""
    tree = s.tree
    for n in tree.nonterminal:
        dist = s.cone.distance(strat.H[n])
        if dist > tol_cone:
            return AdmissibilityReport(False, f"H not in cone (distance {dist:.3g})", tree.labels[n])
    C = strat.C
    for n in range(tree.n_nodes):
        p = tree.parent[n]
        if (p < 0 and C[n] < -tol_admiss) or (p >= 0 and C[n] < C[p] - tol_admiss):
            return AdmissibilityReport(False, "consumption not nonnegative and nondecreasing", tree.labels[n])
    W = wealth_process(s, x, strat)
    for n in tree.paths:
        if W[n] < -tol_admiss:
            return AdmissibilityReport(False, f"negative terminal wealth {W[n]:.6g}", tree.labels[n])
    return AdmissibilityReport(True)


def cumulative_from_rate(s: MarketScenario, c, weights=None) -> np.ndarray:
    """C_n = sum over path nodes m (up to n) of c(m) * w(t(m)).

    ``c`` is indexed by node; entries at nodes whose time has zero weight are
    ignored. ``weights`` overrides the per-node weights of mu.
    """
    c = np.asarray(c, dtype=float)
    w = s.node_weights if weights is None else np.asarray(weights, dtype=float)
    charged = w > 0
    if c.shape != (s.tree.n_nodes,):
        raise ScenarioError(f"rate vector has shape {c.shape}, expected ({s.tree.n_nodes},)")
    if np.any(c[charged] < 0) or np.any(np.isnan(c[charged])):
        raise ScenarioError("consumption rate must be nonnegative on charged nodes")
    inc = np.where(charged, np.where(charged, c, 0.0) * w, 0.0)
    C = np.zeros(s.tree.n_nodes)
    for n in range(s.tree.n_nodes):
        p = s.tree.parent[n]
        C[n] = inc[n] + (C[p] if p >= 0 else 0.0)
    return C


def endowment_increments(s: MarketScenario) -> np.ndarray:
    """E_n - E_parent, with the root value at the root."""
    inc = s.endowment.copy()
    par = s.tree.parent
    nz = par >= 0
    inc[nz] = s.endowment[nz] - s.endowment[par[nz]]
    return inc

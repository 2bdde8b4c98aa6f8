"""The dual domain: closure of the supermartingale measures as a polytope in path coordinates.

A dual measure is a vector ``q`` of terminal-node weights (depth-first path
order of the tree). It belongs to the domain when ``q >= 0``, ``sum(q) = 1``
and, for every non-terminal node ``n`` and cone generator ``g``,

    sum over children c of n:  Q(c) * g . (S_c - S_n)  <=  0,

which is ``Q(n) * g . E_Q[dS | n] <= 0`` written linearly in ``q``. Because
the system is linear in ``q`` and the equivalent measures are dense in it,
boundary points (some ``q = 0``) are members; singular parts cannot occur on a
finite space.
"""

from __future__ import annotations

import itertools
import weakref
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import quadprog
from scipy.optimize import linprog

from .errors import SizeGuardError, SolverError
from .market_model import MarketScenario

TOL_MEMBER = 1e-9
MAX_VERTEX_PATHS = 64
MAX_VERTICES = 20000


@dataclass(frozen=True, eq=False)
class DualMeasure:
    """Terminal weights of a point of the dual domain."""

    q: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.q, dtype=dtype)


@dataclass(frozen=True, eq=False)
class SupermartingalePolytope:
    """{q >= 0, sum q = 1, A q <= 0}; one row of A per (non-terminal node, generator)."""

    A: np.ndarray
    row_node: np.ndarray
    row_generator: np.ndarray
    scenario: MarketScenario

    @property
    def n_paths(self) -> int:
        return self.A.shape[1]

    @cached_property
    def local(self) -> dict:
        """Per non-terminal node: (children, one-step constraint matrix, one-step vertices)."""
        s = self.scenario
        g = s.cone.generators
        dS = s.price_increments
        out = {}
        for n in s.tree.nonterminal:
            ch = np.array(s.tree.children[n], dtype=int)
            R = g @ dS[ch].T  # generators x children
            out[int(n)] = (ch, R, one_step_vertices(R))
        return out

    @cached_property
    def qp_constraints(self):
        """(C, b, meq) in quadprog's convention C.T z >= b, equalities first.

        Rows are scaled to unit max-norm, zero rows dropped, duplicates removed
        and opposite pairs merged into equalities; the equality block is reduced
        to an orthonormal basis of its row space so quadprog never sees a
        dependent equality system.
        """
        m = self.n_paths
        rows = []
        for a in self.A:
            sc = np.abs(a).max()
            if sc > 1e-14:
                rows.append(a / sc)
        ineq, eq = [], []
        used = [False] * len(rows)
        for i, a in enumerate(rows):
            if used[i]:
                continue
            used[i] = True
            is_eq = False
            for j in range(i + 1, len(rows)):
                if used[j]:
                    continue
                if np.allclose(rows[j], a, atol=1e-13, rtol=0):
                    used[j] = True
                elif np.allclose(rows[j], -a, atol=1e-13, rtol=0):
                    used[j] = True
                    is_eq = True
            (eq if is_eq else ineq).append(a)
        E = np.vstack([np.ones((1, m))] + ([np.array(eq)] if eq else []))
        f = np.zeros(E.shape[0])
        f[0] = 1.0
        U, sv, Vt = np.linalg.svd(E, full_matrices=False)
        r = int(np.sum(sv > 1e-12 * sv[0]))
        Er = Vt[:r]
        fr = (U[:, :r].T @ f) / sv[:r]
        Cin = np.vstack([np.eye(m)] + ([-np.array(ineq)] if ineq else []))
        C = np.vstack([Er, Cin]).T
        b = np.concatenate([fr, np.zeros(Cin.shape[0])])
        return C, b, r


_POLY_CACHE: "weakref.WeakKeyDictionary[MarketScenario, SupermartingalePolytope]" = weakref.WeakKeyDictionary()


def polytope(s: MarketScenario) -> SupermartingalePolytope:
    """Cached constraint system of a scenario (scenarios are immutable)."""
    poly = _POLY_CACHE.get(s)
    if poly is None:
        poly = _POLY_CACHE[s] = supermartingale_constraints(s)
    return poly


def supermartingale_constraints(s: MarketScenario) -> SupermartingalePolytope:
    """Linear system describing the dual domain of a scenario."""
    tree = s.tree
    g = s.cone.generators
    dS = s.price_increments
    rows, rn, rg = [], [], []
    for n in tree.nonterminal:
        for j in range(g.shape[0]):
            row = np.zeros(tree.n_paths)
            for c in tree.children[n]:
                row[tree.path_lo[c]:tree.path_hi[c]] = float(g[j] @ dS[c])
            rows.append(row)
            rn.append(n)
            rg.append(j)
    A = np.array(rows) if rows else np.zeros((0, tree.n_paths))
    return SupermartingalePolytope(A, np.array(rn, dtype=int), np.array(rg, dtype=int), s)


def one_step_vertices(R: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Vertices (columns) of {p >= 0, sum p = 1, R p <= 0} by active-set enumeration.

    Only meant for one-step polytopes (a handful of children), where trying
    every choice of k-1 active constraints is cheap and exact.
    """
    R = np.atleast_2d(R)
    k = R.shape[1]
    cons = np.vstack([-np.eye(k), R])  # all written as  c . p <= 0
    verts = []
    for act in itertools.combinations(range(cons.shape[0]), k - 1):
        M = np.vstack([np.ones((1, k)), cons[list(act)]])
        if abs(np.linalg.det(M)) < 1e-14:
            continue
        rhs = np.zeros(k)
        rhs[0] = 1.0
        p = np.linalg.solve(M, rhs)
        if np.all(cons @ p <= tol * max(1.0, np.abs(cons).max())):
            p[p < tol] = 0.0
            p /= p.sum()
            if not any(np.allclose(p, v, atol=1e-12) for v in verts):
                verts.append(p)
    if not verts:
        return np.zeros((k, 0))
    return np.array(verts).T


def strictly_positive_member(s: MarketScenario, poly: SupermartingalePolytope | None = None):
    """A member of the domain with full support, or None if none exists.

    Uses the barycenter of each one-step polytope; its support is the union of
    the vertex supports, so it is strictly positive exactly when some member is.
    """
    poly = poly or supermartingale_constraints(s)
    tree = s.tree
    mass = np.zeros(tree.n_nodes)
    root = int(np.flatnonzero(tree.parent < 0)[0])
    mass[root] = 1.0
    for n in range(tree.n_nodes):
        if not tree.children[n]:
            continue
        ch, _, V = poly.local[n]
        if V.shape[1] == 0:
            return None
        bary = V.mean(axis=1)
        if np.any(bary <= 1e-15):
            return None
        mass[ch] = mass[n] * bary
    return mass[tree.paths]


def density_process(s: MarketScenario, q) -> np.ndarray:
    """Y(n) = Q(node event) / P(node event) for every node."""
    q = np.asarray(q, dtype=float)
    return s.tree.node_mass(q) / s.tree.prob


def is_in_D(poly: SupermartingalePolytope, q, tol: float = TOL_MEMBER) -> bool:
    q = np.asarray(q, dtype=float)
    if q.shape != (poly.n_paths,):
        return False
    if np.any(q < -tol) or abs(q.sum() - 1.0) > tol:
        return False
    return bool(poly.A.size == 0 or np.all(poly.A @ q <= tol))


def solve_qp(poly: SupermartingalePolytope, G, a, extra_C=None, extra_b=None, extra_meq=0):
    """Minimize 0.5 z'Gz - a'z over the domain (plus optional extra constraints).

    Extra constraints follow quadprog's convention ``extra_C.T z >= extra_b``;
    the first ``extra_meq`` of them are equalities.
    """
    C, b, meq = poly.qp_constraints
    if extra_C is not None and extra_C.size:
        Ce, Ci = extra_C[:, :extra_meq], extra_C[:, extra_meq:]
        be, bi = extra_b[:extra_meq], extra_b[extra_meq:]
        C = np.hstack([C[:, :meq], Ce, C[:, meq:], Ci])
        b = np.concatenate([b[:meq], be, b[meq:], bi])
        meq = meq + extra_meq
    G = np.ascontiguousarray(G, dtype=float)
    try:
        z = quadprog.solve_qp(G, np.asarray(a, dtype=float), np.ascontiguousarray(C), b, meq)[0]
    except ValueError as exc:
        raise SolverError(f"QP subproblem over the dual domain failed: {exc}") from exc
    return z


def project_to_D(poly: SupermartingalePolytope, q_raw) -> np.ndarray:
    """Euclidean projection onto the domain."""
    q_raw = np.asarray(q_raw, dtype=float)
    if is_in_D(poly, q_raw, 0.0):
        return q_raw.copy()
    z = solve_qp(poly, np.eye(poly.n_paths), q_raw)
    return _snap(poly, z)


def _snap(poly, z):
    z = np.where(np.abs(z) < 1e-15, 0.0, z)
    z = np.clip(z, 0.0, None)
    return z / z.sum()


def linear_max(poly: SupermartingalePolytope, c):
    """max over the domain of c . q, by backward recursion over one-step vertices.

    Returns (value, argmax q). The maximizer is a vertex of the domain.
    """
    s = poly.scenario
    tree = s.tree
    c = np.asarray(c, dtype=float)
    Z = np.zeros(tree.n_nodes)
    Z[tree.paths] = c
    choice = {}
    for n in reversed(range(tree.n_nodes)):
        if not tree.children[n]:
            continue
        ch, _, V = poly.local[n]
        vals = Z[ch] @ V
        k = int(np.argmax(vals))
        choice[n] = V[:, k]
        Z[n] = vals[k]
    mass = np.zeros(tree.n_nodes)
    root = int(np.flatnonzero(tree.parent < 0)[0])
    mass[root] = 1.0
    for n in range(tree.n_nodes):
        if n in choice:
            ch = poly.local[n][0]
            mass[ch] = mass[n] * choice[n]
    return float(Z[root]), mass[tree.paths]


def linear_min(poly: SupermartingalePolytope, c):
    v, q = linear_max(poly, -np.asarray(c, dtype=float))
    return -v, q


def linear_max_lp(poly: SupermartingalePolytope, c):
    """Same as linear_max but through an LP solve (HiGHS)."""
    m = poly.n_paths
    res = linprog(
        -np.asarray(c, dtype=float),
        A_ub=poly.A if poly.A.size else None,
        b_ub=np.zeros(poly.A.shape[0]) if poly.A.size else None,
        A_eq=np.ones((1, m)),
        b_eq=[1.0],
        bounds=[(0, None)] * m,
        method="highs",
    )
    if res.status != 0:
        raise SolverError(f"LP over the dual domain failed: {res.message}")
    return float(-res.fun), res.x


def vertices(poly: SupermartingalePolytope, max_paths: int = MAX_VERTEX_PATHS, max_vertices: int = MAX_VERTICES):
    """Exact vertex list (rows, sorted) of the domain.

    A member is extreme exactly when its conditional one-step measure at every
    node it charges is a one-step vertex, so the vertices are enumerated as
    products of one-step vertices, leaves upward. Nodes a vertex does not
    charge contribute nothing, which is what keeps the count small.
    """
    m = poly.n_paths
    if m > max_paths:
        raise SizeGuardError(f"vertex enumeration guarded at {max_paths} paths, scenario has {m}")
    tree = poly.scenario.tree
    sub = {}
    for n in reversed(range(tree.n_nodes)):
        if not tree.children[n]:
            sub[n] = [np.ones(1)]
            continue
        ch, _, V = poly.local[n]
        out = []
        for v in V.T:
            parts = []
            for c, w in zip(ch, v):
                width = tree.path_hi[c] - tree.path_lo[c]
                parts.append([w * x for x in sub[c]] if w > 0 else [np.zeros(width)])
            n_combo = int(np.prod([len(p) for p in parts]))
            if len(out) + n_combo > max_vertices:
                raise SizeGuardError(f"vertex enumeration exceeded {max_vertices} vertices")
            out.extend(np.concatenate(combo) for combo in itertools.product(*parts))
        sub[n] = out
    root = int(np.flatnonzero(tree.parent < 0)[0])
    V = np.array(sub[root])
    V[np.abs(V) < 1e-15] = 0.0
    order = sorted(range(len(V)), key=lambda i: tuple(np.round(-V[i], 12)))
    return V[order]


def vertices_double_description(
    poly: SupermartingalePolytope, max_paths: int = MAX_VERTEX_PATHS, max_vertices: int = MAX_VERTICES
):
    """Exact vertex list (rows) by the double-description method.

    Independent of the tree structure, and much slower; used to cross-check
    ``vertices`` on small scenarios.

    Enumerates the extreme rays of the cone {z >= 0, A z <= 0}, adding one
    half-space at a time; two rays are combined only if they are adjacent
    (no third ray vanishes on every constraint they share). Rays normalised
    to unit mass are the vertices.
    """
    m = poly.n_paths
    if m > max_paths:
        raise SizeGuardError(f"vertex enumeration guarded at {max_paths} paths, scenario has {m}")
    # deepest nodes first keeps the intermediate ray count small
    tix = poly.scenario.tree.time_index[poly.row_node] if poly.A.size else np.zeros(0)
    order = np.argsort(-tix, kind="stable")
    A = [a / np.abs(a).max() for a in poly.A[order] if np.abs(a).max() > 1e-14]
    n_cons = m + len(A)
    W = (n_cons + 63) // 64
    one = np.uint64(1)

    def setbit(Zw, rows, cid):
        Zw[rows, cid // 64] |= one << np.uint64(cid % 64)

    # zero sets bit-packed: Z[r, w] holds constraints 64w..64w+63
    R = np.eye(m)
    Z = np.zeros((m, W), dtype=np.uint64)
    for i in range(m):
        for c in range(m):
            if c != i:
                setbit(Z, i, c)
    for k, a in enumerate(A):
        cid = m + k
        v = R @ a
        tol = 1e-11 * np.abs(R).max(axis=1)
        neg, zero, pos = v < -tol, np.abs(v) <= tol, v > tol
        if not pos.any():
            setbit(Z, np.flatnonzero(zero), cid)
            continue
        ineg, ipos = np.flatnonzero(neg), np.flatnonzero(pos)
        pi, pj = np.meshgrid(ineg, ipos, indexing="ij")
        pi, pj = pi.ravel(), pj.ravel()
        adjacent = np.zeros(pi.size, dtype=bool)
        for start in range(0, pi.size, 512):
            bi, bj = pi[start:start + 512], pj[start:start + 512]
            common = Z[bi] & Z[bj]  # (B, W)
            # rays whose zero set contains the common zero set of the pair
            cover = np.all((Z[None, :, :] & common[:, None, :]) == common[:, None, :], axis=2)
            n_cover = cover.sum(axis=1)  # includes i and j themselves
            adjacent[start:start + 512] = n_cover == 2
        pi, pj = pi[adjacent], pj[adjacent]
        new_R = v[pj, None] * R[pi] - v[pi, None] * R[pj]
        if new_R.size:
            new_R /= np.abs(new_R).max(axis=1, keepdims=True)
        new_Z = Z[pi] & Z[pj]
        setbit(new_Z, np.arange(new_Z.shape[0]), cid)
        keep = neg | zero
        setbit(Z, np.flatnonzero(zero), cid)
        R = np.vstack([R[keep], new_R])
        Z = np.vstack([Z[keep], new_Z])
        if R.shape[0] > max_vertices:
            raise SizeGuardError(f"vertex enumeration exceeded {max_vertices} rays")
    R = np.clip(R, 0.0, None)
    V = R / R.sum(axis=1, keepdims=True)
    V[np.abs(V) < 1e-15] = 0.0
    out = []
    for v in V:
        if not any(np.allclose(v, w, atol=1e-12) for w in out):
            out.append(v)
    order = sorted(range(len(out)), key=lambda i: tuple(np.round(-out[i], 12)))
    return np.array([out[i] for i in order])

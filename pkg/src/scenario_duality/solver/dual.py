"""Dual objective, its minimization over the dual domain, and the y <-> x matching.

Everything is written in path coordinates ``q``. With M the node/path
incidence matrix, the node masses are Q = M q and the density is Y = Q / P.
For per-node weights w (the mu weight of the node's time unless overridden)
the objective and its derivatives are

    J(y, q)    = sum_n P_n w_n V(t_n, n, y Y_n) + y q . E_T
    grad_q J   = -y M_c' (w I(y Y)) + y E_T
    hess_q J   = y^2 M_c' diag(w V''(y Y) / P) M_c,   V'' = -dI/dy

where the sums run over charged nodes (w_n > 0) and M_c holds their rows.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from ..dual_domain import (
    DualMeasure,
    SupermartingalePolytope,
    is_in_D,
    linear_max,
    linear_min,
    polytope,
    solve_qp,
    strictly_positive_member,
    _snap,
)
from ..errors import SolverError, UtilityError
from ..market_model import MarketScenario
from ..utility import UtilityField

log = logging.getLogger(__name__)

EPS_BARRIER = 1e-12
Y_BRACKET = (1e-8, 1e8)


@dataclass
class DualOptions:
    tol_opt: float = 1e-13
    tol_stall: float = 1e-10
    polish_from: float = 1e-4
    prox: float = 1e-6
    max_iter: int = 200
    armijo: float = 1e-4
    min_norm: bool = True
    tol_match: float = 1e-11


@dataclass
class DualObjectiveEval:
    y: float
    q: np.ndarray
    value: float
    gradient: np.ndarray | None


@dataclass
class DualResult:
    """Minimizer of J(y, .) over the domain with its certificate data."""

    y: float
    q: np.ndarray
    value: float
    gradient: np.ndarray
    fw_gap: float
    iterations: int
    Y: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def measure(self) -> DualMeasure:
        return DualMeasure(self.q)


class DualProblem:
    """Cached data of the dual problem for one scenario, field and weight vector."""

    def __init__(self, s: MarketScenario, U: UtilityField, weights=None):
        self.s, self.U = s, U
        tree = s.tree
        self.w_all = s.node_weights if weights is None else np.asarray(weights, dtype=float)
        self.nodes = np.flatnonzero(self.w_all > 0)
        self.w = self.w_all[self.nodes]
        self.t = tree.time_index[self.nodes]
        self.P = tree.prob[self.nodes]
        self.Mc = tree.incidence[self.nodes].astype(float)
        self.E = s.terminal_endowment
        self.poly: SupermartingalePolytope = polytope(s)
        v0 = np.asarray(U.v_at_zero(self.t, self.nodes), dtype=float) * np.ones(self.nodes.size)
        self.barrier = bool(np.any(np.isinf(v0)))
        self._start = None

    # -- evaluation -------------------------------------------------------

    def density(self, q):
        """Y on charged nodes."""
        return (self.Mc @ q) / self.P

    def value(self, y, q, with_grad=True) -> DualObjectiveEval:
        if not y > 0:
            raise UtilityError("dual scale y must be positive")
        q = np.asarray(q, dtype=float)
        Y = self.density(q)
        if np.any(Y <= 0):
            zero = Y <= 0
            v0 = np.asarray(self.U.v_at_zero(self.t[zero], self.nodes[zero]), dtype=float)
            if np.any(np.isinf(v0)):
                return DualObjectiveEval(y, q, np.inf, None)
        z = y * Y
        pos = z > 0
        V = np.empty_like(z)
        Ivals = np.empty_like(z)
        V[pos] = self.U.v(self.t[pos], self.nodes[pos], z[pos])
        Ivals[pos] = self.U.i(self.t[pos], self.nodes[pos], z[pos])
        if np.any(~pos):
            V[~pos] = self.U.v_at_zero(self.t[~pos], self.nodes[~pos])
            Ivals[~pos] = np.inf
        val = float(np.sum(self.P * self.w * V) + y * (q @ self.E))
        grad = None
        if with_grad and np.all(pos):
            grad = -y * (self.Mc.T @ (self.w * Ivals)) + y * self.E
        return DualObjectiveEval(y, q, val, grad)

    def hessian(self, y, q):
        z = y * self.density(q)
        d2 = -np.asarray(self.U.di(self.t, self.nodes, z), dtype=float)
        D = y * y * self.w * d2 / self.P
        return (self.Mc.T * D) @ self.Mc

    def consumption(self, y, q):
        """I(t, y Y) on charged nodes."""
        return np.asarray(self.U.i(self.t, self.nodes, y * self.density(q)), dtype=float)

    def derivative(self, y, q) -> float:
        """V'(y) = <q, E_T> - sum_n w_n Q_n I(t_n, y Y_n)."""
        Q = self.Mc @ q
        return float(q @ self.E - np.sum(self.w * Q * self.consumption(y, q)))

    # -- minimization -----------------------------------------------------

    def start(self):
        if self._start is None:
            q = strictly_positive_member(self.s, self.poly)
            if q is None:
                raise SolverError("dual domain has no strictly positive member")
            self._start = q
        return self._start.copy()

    def _guard(self):
        if not self.barrier:
            return None, None
        return self.Mc.T.copy(), EPS_BARRIER * self.P

    def fw_gap(self, g, q):
        lo, qv = linear_min(self.poly, g)
        return float(g @ q - lo), qv

    def gradient_scale(self, y, q):
        """y times the size of the gradient's two parts; the gap divided by it is a relative VI."""
        c = self.Mc.T @ (self.w * self.consumption(y, q))
        return y * max(1.0, float(np.max(np.abs(c))), float(np.max(np.abs(self.E))) if self.E.size else 0.0)

    def solve(self, y, q0=None, opts: DualOptions | None = None) -> DualResult:
        """Projected Newton with Armijo backtracking, then an active-face Newton polish.

        A Frank-Wolfe step stands in when the QP fails or returns a non-descent
        direction. Stops when the Frank-Wolfe gap is below ``tol_opt`` times
        :meth:`gradient_scale`.
        """
        opts = opts or DualOptions()
        q = self.start() if q0 is None else np.asarray(q0, dtype=float).copy()
        ev = self.value(y, q)
        if not np.isfinite(ev.value) or ev.gradient is None:
            q = self.start()
            ev = self.value(y, q)
            if not np.isfinite(ev.value):
                raise SolverError("dual objective is +inf at the strictly positive starting point")
        Cg, bg = self._guard()
        m = self.poly.n_paths
        fw_steps = polished = 0
        for it in range(1, opts.max_iter + 1):
            g = ev.gradient
            gap, q_fw = self.fw_gap(g, q)
            sc = self.gradient_scale(y, q)
            if gap <= opts.tol_opt * sc:
                break
            if gap <= opts.polish_from * sc:
                pol = self._polish(y, q, gap)
                if pol is not None:
                    q, ev, gap = pol
                    polished += 1
                    if gap <= opts.tol_opt * sc:
                        break
                    g = ev.gradient
                    gap, q_fw = self.fw_gap(g, q)
            H = self.hessian(y, q)
            # proximal term keeps G well conditioned for the QP; directions where J is
            # linear (off the charged nodes) then take long projected steps
            reg = opts.prox * max(1.0, float(np.trace(H)) / m)
            G = H + reg * np.eye(m)
            try:
                z = solve_qp(self.poly, G, G @ q - g, Cg, bg, 0)
                d = z - q
            except SolverError:
                d = q_fw - q
                fw_steps += 1
            slope = float(g @ d)
            if slope >= -1e-15 * sc:
                if gap <= opts.tol_stall * sc:
                    break
                d = q_fw - q
                slope = float(g @ d)
                fw_steps += 1
            step = 1.0
            jscale = max(1.0, abs(ev.value))
            while True:
                cand = q + step * d
                ec = self.value(y, cand)
                if ec.gradient is not None:
                    if ec.value <= ev.value + opts.armijo * step * slope:
                        break
                    # below the rounding of J the decrease is invisible; accept on a smaller gap
                    if abs(ec.value - ev.value) <= 1e-14 * jscale and self.fw_gap(ec.gradient, cand)[0] < 0.5 * gap:
                        break
                step *= 0.5
                if step < 1e-16:
                    break
            if step < 1e-16:
                if gap <= opts.tol_stall * sc:
                    break
                raise SolverError(f"line search failed at iteration {it}", residual=gap / sc)
            q = np.clip(cand, 0.0, None)
            q /= q.sum()
            ev = self.value(y, q)
        else:
            gap, _ = self.fw_gap(ev.gradient, q)
            sc = self.gradient_scale(y, q)
            if gap > opts.tol_stall * sc:
                raise SolverError(f"dual solver did not converge in {opts.max_iter} iterations", residual=gap / sc)
        if opts.min_norm:
            q = self._min_norm(q)
            ev = self.value(y, q)
        gap, _ = self.fw_gap(ev.gradient, q)
        A = self.poly.A
        active = int(np.sum(q <= 1e-14)) + (int(np.sum(A @ q >= -1e-12)) if A.size else 0)
        diag = {"fw_steps": fw_steps, "polish_rounds": polished, "active_constraints": active, "barrier": self.barrier}
        return DualResult(y, q, ev.value, ev.gradient, gap, it, self.density(q), diag)

    def _polish(self, y, q, gap0, iters: int = 30):
        """Newton on the face of the domain that is active at q, in a null-space basis.

        Returns (q, eval, gap) when the Frank-Wolfe gap improves, else None.
        """
        A = self.poly.A
        m = q.size
        zero = q <= 1e-9 * q.max()
        act = np.zeros(A.shape[0], bool)
        if A.size:
            norms = np.maximum(np.abs(A).max(axis=1), 1e-300)
            act = (A @ q) / norms >= -1e-9
        B = np.vstack([np.ones((1, m)), np.eye(m)[zero], A[act]])
        rhs = np.r_[1.0, np.zeros(B.shape[0] - 1)]
        _, sv, Vt = np.linalg.svd(B)
        r = int(np.sum(sv > 1e-10 * sv[0]))
        N = Vt[r:].T
        if N.shape[1] == 0:
            return None
        x = q.copy()
        x[zero] = 0.0
        x -= np.linalg.pinv(B, rcond=1e-10) @ (B @ x - rhs)
        for _ in range(iters):
            e = self.value(y, x)
            if e.gradient is None:
                return None
            gN = N.T @ e.gradient
            HN = N.T @ self.hessian(y, x) @ N
            dz = -np.linalg.lstsq(HN, gN, rcond=1e-13)[0]
            d = N @ dz
            alpha = 1.0
            neg = d < 0
            free = ~zero & neg
            if np.any(free):
                alpha = min(alpha, float(np.min(-x[free] / d[free])) * 0.99)
            if A.size:
                Ad = A[~act] @ d
                up = Ad > 0
                if np.any(up):
                    alpha = min(alpha, float(np.min(-(A[~act] @ x)[up] / Ad[up])) * 0.99)
            if alpha <= 1e-12:
                break
            x = x + alpha * d
            if np.linalg.norm(alpha * d) <= 1e-15:
                break
        x = np.clip(x, 0.0, None)
        x /= x.sum()
        if A.size and np.any(A @ x > 1e-14):
            return None
        e = self.value(y, x)
        if e.gradient is None:
            return None
        gap, _ = self.fw_gap(e.gradient, x)
        if gap < gap0:
            return x, e, gap
        return None

    def _min_norm(self, q):
        """Minimum-norm member with the same charged-node masses and endowment value."""
        C, b, meq = self.poly.qp_constraints
        Er, fr = C[:, :meq].T, b[:meq]
        E2 = np.vstack([self.Mc, self.E[None, :]])
        f2 = E2 @ q
        proj = E2 @ Er.T
        E2 = E2 - proj @ Er
        f2 = f2 - proj @ fr
        if not E2.size:
            return q
        Uu, sv, Vt = np.linalg.svd(E2, full_matrices=False)
        if sv.size == 0 or sv[0] < 1e-12:
            return q
        r = int(np.sum(sv > 1e-10 * max(1.0, sv[0])))
        Ex = Vt[:r]
        fx = (Uu[:, :r].T @ f2) / sv[:r]
        try:
            z = solve_qp(self.poly, np.eye(q.size), np.zeros(q.size), Ex.T.copy(), fx, r)
        except SolverError:
            return q
        z = _snap(self.poly, z)
        if not is_in_D(self.poly, z, 1e-12) or np.max(np.abs(self.Mc @ (z - q))) > 1e-12:
            return q
        return z

    # -- matching ---------------------------------------------------------

    def match(self, x, opts: DualOptions | None = None, q0=None):
        """y > 0 with V'(y) = -x; brentq on log y with a geometric bracket from y = 1."""
        opts = opts or DualOptions()
        # V'(inf) = min_D <q, E_T>: below this wealth nothing positive is financeable
        x_min = -linear_min(self.poly, self.E)[0]
        if not x > x_min + 1e-12 * max(1.0, abs(x_min)):
            raise SolverError(f"initial wealth x={x} must exceed the financing threshold {x_min:.17g}", residual=x - x_min)
        cache = {}
        warm = [q0]

        def fprime(logy):
            y = float(np.exp(logy))
            if logy not in cache:
                r = self.solve(y, warm[0], opts)
                warm[0] = r.q
                cache[logy] = r
            r = cache[logy]
            return self.derivative(y, r.q) + x

        lo_lim, hi_lim = np.log(Y_BRACKET[0]), np.log(Y_BRACKET[1])
        a = b = 0.0
        fa = fb = fprime(0.0)
        while fa > 0:
            a -= np.log(4.0)
            if a < lo_lim:
                raise SolverError(f"bracket expansion for x={x} exhausted below y={Y_BRACKET[0]}", residual=fa)
            fa = fprime(a)
        while fb < 0:
            b += np.log(4.0)
            if b > hi_lim:
                raise SolverError(
                    f"bracket expansion for x={x} exhausted above y={Y_BRACKET[1]}: V'(inf) < -x", residual=fb
                )
            fb = fprime(b)
        if fa == 0:
            root = a
        elif fb == 0:
            root = b
        else:
            root = brentq(fprime, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        y = float(np.exp(root))
        res = cache.get(root) or self.solve(y, warm[0], opts)
        resid = self.derivative(y, res.q) + x
        if abs(resid) > 1e-8 * max(1.0, abs(x)):
            raise SolverError(f"|V'(y) + x| = {abs(resid):.3g} after root finding", residual=resid)
        return y, res


# ---------------------------------------------------------------------------
# functional interface


def _q(Q):
    return np.asarray(Q, dtype=float)


def dual_value(s: MarketScenario, U: UtilityField, y: float, Q, weights=None) -> DualObjectiveEval:
    """J(y, Q) with gradient; value is +inf when V(0+) = inf and Y vanishes on a charged node."""
    return DualProblem(s, U, weights).value(y, _q(Q))


def solve_dual(s: MarketScenario, U: UtilityField, y: float, opts: DualOptions | None = None, q0=None, weights=None):
    if not y > 0:
        raise UtilityError("dual scale y must be positive")
    return DualProblem(s, U, weights).solve(y, q0, opts)


def dual_derivative(s: MarketScenario, U: UtilityField, y: float, Q, weights=None) -> float:
    return DualProblem(s, U, weights).derivative(y, _q(Q))


def match_y_to_x(s: MarketScenario, U: UtilityField, x: float, opts: DualOptions | None = None, weights=None):
    """Returns (y, DualResult). x = 0 is accepted whenever a root exists (V'(inf) > 0)."""
    if x < 0:
        raise ValueError("initial wealth must be nonnegative")
    return DualProblem(s, U, weights).match(x, opts)

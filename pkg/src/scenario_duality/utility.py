"""Utility random fields on an event tree, their conjugates and diagnostics.

A field is evaluated as ``u(t, node, x)`` where ``t`` is the time index and
``node`` the internal node index; both broadcast against ``x`` so a whole
tree can be evaluated in one call. Randomness is node dependence, which makes
adaptedness automatic.

Every field carries marginal envelopes ``K1 <= du <= K2``. Besides bounding
the field they bracket the inverse marginal:

    K1^{-1}(y) <= I(t, y) <= K2^{-1}(y).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import UtilityError

REL_TOL = 1e-12


# ---------------------------------------------------------------------------
# envelopes


class Envelope:
    """Continuous, strictly decreasing, positive function on (0, inf) with an inverse."""

    def __call__(self, x):
        raise NotImplementedError

    def inverse(self, y):
        raise NotImplementedError

    def affine(self, c: float, a: float) -> "Envelope":
        """The envelope x -> c * K(a x)."""
        raise NotImplementedError

    def integral(self, x: float) -> float:
        """Integral of K from 1 to x (negative for x < 1)."""
        return float(quad(self, 1.0, x, limit=200)[0])


@dataclass(frozen=True)
class PowerEnvelope(Envelope):
    coef: float
    expo: float

    def __post_init__(self):
        if self.coef <= 0 or self.expo >= 0:
            raise UtilityError(f"power envelope needs coef > 0 and exponent < 0, got {self.coef}, {self.expo}")

    def __call__(self, x):
        return self.coef * np.power(x, self.expo)

    def inverse(self, y):
        return np.power(np.asarray(y, dtype=float) / self.coef, 1.0 / self.expo)

    def affine(self, c, a):
        return PowerEnvelope(c * self.coef * a**self.expo, self.expo)

    def integral(self, x):
        if self.expo == -1.0:
            return self.coef * float(np.log(x))
        e1 = self.expo + 1.0
        return self.coef * (x**e1 - 1.0) / e1


@dataclass(frozen=True)
class MinEnvelope(Envelope):
    parts: tuple

    def __call__(self, x):
        return np.min([p(x) for p in self.parts], axis=0)

    def inverse(self, y):
        return np.min([p.inverse(y) for p in self.parts], axis=0)

    def affine(self, c, a):
        return MinEnvelope(tuple(p.affine(c, a) for p in self.parts))


@dataclass(frozen=True)
class MaxEnvelope(Envelope):
    parts: tuple

    def __call__(self, x):
        return np.max([p(x) for p in self.parts], axis=0)

    def inverse(self, y):
        return np.max([p.inverse(y) for p in self.parts], axis=0)

    def affine(self, c, a):
        return MaxEnvelope(tuple(p.affine(c, a) for p in self.parts))


def _same(a: Envelope, b: Envelope) -> bool:
    return a == b


# ---------------------------------------------------------------------------
# fields


def _check_y(y):
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)):
        raise UtilityError("dual argument y must be strictly positive")
    return y


class UtilityField:
    """Base class. Subclasses give u, du, d2u and envelopes; closed forms for i and v are optional.

    The defaults for ``i`` and ``v`` are the numeric fallback: a bracketed
    Brent solve of du(x) = y in log-space, then V = U(I) - y I.
    """

    family = "custom"
    K1: Envelope
    K2: Envelope

    def u(self, t, node, x):
        raise NotImplementedError

    def du(self, t, node, x):
        raise NotImplementedError

    def d2u(self, t, node, x):
        raise NotImplementedError

    def i(self, t, node, y):
        return numeric_inverse_marginal(self, t, node, y)

    def v(self, t, node, y):
        return numeric_conjugate(self, t, node, y)

    def di(self, t, node, y):
        """dI/dy = 1 / U''(I(y))."""
        x = self.i(t, node, y)
        return 1.0 / self.d2u(t, node, x)

    def v_at_zero(self, t, node):
        """V(t, 0+) = U(t, inf)."""
        return np.inf

    @property
    def homogeneous(self) -> bool:
        """True when the field does not depend on (t, node)."""
        return False

    def describe(self) -> dict:
        return {"family": self.family}


def numeric_inverse_marginal(U: UtilityField, t, node, y):
    """Solve du(t, node, x) = y for x, bracketed by the envelope inverses."""
    y = _check_y(y)
    t, node, y = np.broadcast_arrays(np.asarray(t), np.asarray(node), y)
    out = np.empty(y.shape)
    for k in np.ndindex(y.shape):
        yy = float(y[k])
        lo = float(U.K1.inverse(yy)) * (1 - 1e-9)
        hi = float(U.K2.inverse(yy)) * (1 + 1e-9)
        tk, nk = t[k], node[k]

        def f(s):
            return np.log(U.du(tk, nk, np.exp(s))) - np.log(yy)

        a, b = np.log(lo), np.log(hi)
        fa, fb = f(a), f(b)
        if fa == 0:
            out[k] = lo
        elif fb == 0:
            out[k] = hi
        else:
            if fa * fb > 0:
                raise UtilityError(f"envelope bracket fails to contain I(t={tk}, y={yy}): check K1 <= du <= K2")
            out[k] = np.exp(brentq(f, a, b, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=300))
    return out if out.ndim else float(out)


def numeric_conjugate(U: UtilityField, t, node, y):
    x = numeric_inverse_marginal(U, t, node, y)
    return U.u(t, node, x) - x * np.asarray(y, dtype=float)


class Power(UtilityField):
    """x**alpha / alpha, 0 < alpha < 1."""

    family = "power"

    def __init__(self, alpha: float):
        if not 0 < alpha < 1:
            raise UtilityError(f"power utility needs 0 < alpha < 1, got {alpha}")
        self.alpha = float(alpha)
        self.K1 = self.K2 = PowerEnvelope(1.0, self.alpha - 1.0)

    def u(self, t, node, x):
        return np.power(x, self.alpha) / self.alpha

    def du(self, t, node, x):
        with np.errstate(divide="ignore"):
            return np.power(x, self.alpha - 1.0)

    def d2u(self, t, node, x):
        return (self.alpha - 1.0) * np.power(x, self.alpha - 2.0)

    def i(self, t, node, y):
        y = _check_y(y)
        return np.power(y, 1.0 / (self.alpha - 1.0))

    def v(self, t, node, y):
        y = _check_y(y)
        a = self.alpha
        return (1.0 - a) / a * np.power(y, -a / (1.0 - a))

    def di(self, t, node, y):
        y = _check_y(y)
        e = 1.0 / (self.alpha - 1.0)
        return e * np.power(y, e - 1.0)

    @property
    def homogeneous(self):
        return True

    def describe(self):
        return {"family": "power", "alpha": self.alpha}


class Log(UtilityField):
    """log x; AE = 0 and U(inf) = inf."""

    family = "log"

    def __init__(self):
        self.K1 = self.K2 = PowerEnvelope(1.0, -1.0)

    def u(self, t, node, x):
        with np.errstate(divide="ignore"):
            return np.log(x)

    def du(self, t, node, x):
        with np.errstate(divide="ignore"):
            return 1.0 / np.asarray(x, dtype=float)

    def d2u(self, t, node, x):
        return -1.0 / np.square(x)

    def i(self, t, node, y):
        return 1.0 / _check_y(y)

    def v(self, t, node, y):
        return -np.log(_check_y(y)) - 1.0

    def di(self, t, node, y):
        return -1.0 / np.square(_check_y(y))

    @property
    def homogeneous(self):
        return True

    def describe(self):
        return {"family": "log"}


class Discounted(UtilityField):
    """psi(t) * base(x) with psi given per time index and bounded away from 0 and inf."""

    family = "discounted"

    def __init__(self, base: UtilityField, psi: Sequence[float]):
        psi = np.asarray(psi, dtype=float)
        if np.any(~(psi > 0)) or np.any(~np.isfinite(psi)):
            raise UtilityError("discount factors must be positive and finite")
        self.base, self.psi = base, psi
        self.K1 = base.K1.affine(float(psi.min()), 1.0)
        self.K2 = base.K2.affine(float(psi.max()), 1.0)

    @classmethod
    def exponential(cls, base: UtilityField, beta: float, time_grid: Sequence[float]) -> "Discounted":
        return cls(base, np.exp(-beta * np.asarray(time_grid, dtype=float)))

    def _p(self, t):
        return self.psi[np.asarray(t)]

    def u(self, t, node, x):
        return self._p(t) * self.base.u(t, node, x)

    def du(self, t, node, x):
        return self._p(t) * self.base.du(t, node, x)

    def d2u(self, t, node, x):
        return self._p(t) * self.base.d2u(t, node, x)

    def i(self, t, node, y):
        y = _check_y(y)
        return self.base.i(t, node, y / self._p(t))

    def v(self, t, node, y):
        y = _check_y(y)
        p = self._p(t)
        return p * self.base.v(t, node, y / p)

    def di(self, t, node, y):
        y = _check_y(y)
        p = self._p(t)
        return self.base.di(t, node, y / p) / p

    def v_at_zero(self, t, node):
        return self.base.v_at_zero(t, node)

    @property
    def homogeneous(self):
        return self.base.homogeneous and bool(np.all(self.psi == self.psi[0]))

    def describe(self):
        return {"family": "discounted", "psi": self.psi.tolist(), "base": self.base.describe()}


class Scaled(UtilityField):
    """scale * base(t, x / scale): the field seen when consumption is measured in units of 1/scale."""

    family = "scaled"

    def __init__(self, base: UtilityField, scale: float):
        if not scale > 0:
            raise UtilityError("scale must be positive")
        self.base, self.scale = base, float(scale)
        self.K1 = base.K1.affine(1.0, 1.0 / self.scale)
        self.K2 = base.K2.affine(1.0, 1.0 / self.scale)

    def u(self, t, node, x):
        return self.scale * self.base.u(t, node, np.asarray(x) / self.scale)

    def du(self, t, node, x):
        return self.base.du(t, node, np.asarray(x) / self.scale)

    def d2u(self, t, node, x):
        return self.base.d2u(t, node, np.asarray(x) / self.scale) / self.scale

    def i(self, t, node, y):
        return self.scale * self.base.i(t, node, y)

    def v(self, t, node, y):
        return self.scale * self.base.v(t, node, y)

    def di(self, t, node, y):
        return self.scale * self.base.di(t, node, y)

    def v_at_zero(self, t, node):
        return self.scale * self.base.v_at_zero(t, node)

    @property
    def homogeneous(self):
        return self.base.homogeneous

    def describe(self):
        return {"family": "scaled", "scale": self.scale, "base": self.base.describe()}


class Mixed(UtilityField):
    """Running field before the horizon index, terminal field at it."""

    family = "mixed"

    def __init__(self, running: UtilityField, terminal: UtilityField, horizon_index: int):
        self.running, self.terminal, self.N = running, terminal, int(horizon_index)
        self.K1 = running.K1 if _same(running.K1, terminal.K1) else MinEnvelope((running.K1, terminal.K1))
        self.K2 = running.K2 if _same(running.K2, terminal.K2) else MaxEnvelope((running.K2, terminal.K2))

    def _pick(self, name, t, node, z):
        t = np.asarray(t)
        at_T = t == self.N
        with np.errstate(all="ignore"):
            if np.all(at_T):
                return getattr(self.terminal, name)(t, node, z)
            if not np.any(at_T):
                return getattr(self.running, name)(t, node, z)
            a = getattr(self.terminal, name)(t, node, z)
            b = getattr(self.running, name)(t, node, z)
        return np.where(at_T, a, b)

    def u(self, t, node, x):
        return self._pick("u", t, node, x)

    def du(self, t, node, x):
        return self._pick("du", t, node, x)

    def d2u(self, t, node, x):
        return self._pick("d2u", t, node, x)

    def i(self, t, node, y):
        return self._pick("i", t, node, _check_y(y))

    def v(self, t, node, y):
        return self._pick("v", t, node, _check_y(y))

    def di(self, t, node, y):
        return self._pick("di", t, node, _check_y(y))

    def v_at_zero(self, t, node):
        return np.maximum(self.running.v_at_zero(t, node), self.terminal.v_at_zero(t, node))

    def describe(self):
        return {
            "family": "mixed",
            "horizon_index": self.N,
            "running": self.running.describe(),
            "terminal": self.terminal.describe(),
        }


class StochasticDiscount(UtilityField):
    """base(t, B(node) x) for a node-wise positive, bounded discount process B."""

    family = "stochastic_discount"

    def __init__(self, base: UtilityField, B: Sequence[float]):
        B = np.asarray(B, dtype=float)
        if np.any(~(B > 0)) or np.any(~np.isfinite(B)):
            raise UtilityError("stochastic discount must be positive and finite at every node")
        self.base, self.B = base, B
        lo, hi = float(B.min()), float(B.max())
        # valid when B -> B K(B x) is increasing, true for envelope exponents >= -1
        self.K1 = base.K1.affine(lo, lo)
        self.K2 = base.K2.affine(hi, hi)

    def _b(self, node):
        return self.B[np.asarray(node)]

    def u(self, t, node, x):
        return self.base.u(t, node, self._b(node) * x)

    def du(self, t, node, x):
        b = self._b(node)
        return b * self.base.du(t, node, b * x)

    def d2u(self, t, node, x):
        b = self._b(node)
        return b * b * self.base.d2u(t, node, b * x)

    def i(self, t, node, y):
        b = self._b(node)
        return self.base.i(t, node, _check_y(y) / b) / b

    def v(self, t, node, y):
        return self.base.v(t, node, _check_y(y) / self._b(node))

    def di(self, t, node, y):
        b = self._b(node)
        return self.base.di(t, node, _check_y(y) / b) / (b * b)

    def v_at_zero(self, t, node):
        return self.base.v_at_zero(t, node)

    def describe(self):
        return {"family": "stochastic_discount", "B": self.B.tolist(), "base": self.base.describe()}


class Custom(UtilityField):
    """Field given only by callables and envelopes; conjugate and inverse are numeric."""

    family = "custom"

    def __init__(self, u: Callable, du: Callable, d2u: Callable, K1: Envelope, K2: Envelope, name: str = "custom"):
        self._u, self._du, self._d2u = u, du, d2u
        self.K1, self.K2 = K1, K2
        self.name = name

    def u(self, t, node, x):
        return self._u(t, node, x)

    def du(self, t, node, x):
        return self._du(t, node, x)

    def d2u(self, t, node, x):
        return self._d2u(t, node, x)

    def describe(self):
        return {"family": "custom", "name": self.name}


# ---------------------------------------------------------------------------
# module-level operations


def conjugate(U: UtilityField, t, node, y):
    """V(t, y) = sup_{x>0} [U(t, x) - x y]."""
    _check_y(y)
    return U.v(t, node, y)


def inverse_marginal(U: UtilityField, t, node, y):
    """I(t, y): the x with du(t, x) = y."""
    _check_y(y)
    return U.i(t, node, y)


def _domain_arrays(domain):
    if domain is None:
        domain = [(0, 0)]
    d = np.asarray(domain, dtype=int).reshape(-1, 2)
    return d[:, 0], d[:, 1]


def scenario_domain(s, charged_only: bool = False):
    """(time index, node) pairs of a scenario, for grid checks."""
    nodes = s.charged if charged_only else np.arange(s.tree.n_nodes)
    return [(int(s.tree.time_index[n]), int(n)) for n in nodes]


@dataclass
class GridCheck:
    ok: bool
    failures: list = field(default_factory=list)
    envelope_ratio: float = float("nan")


def check_field(U: UtilityField, domain=None, grid=None) -> GridCheck:
    """Grid verification of the field axioms at every (t, node) of ``domain``.

    Checks strict monotonicity and concavity, the Inada limits, envelope
    containment, and records the ratio K2/K1 at the largest grid point.
    """
    if grid is None:
        grid = np.logspace(-6, 6, 241)
    T, Nd = _domain_arrays(domain)
    fails = []
    x = np.asarray(grid, dtype=float)
    for t, n in zip(T, Nd):
        with np.errstate(all="ignore"):
            u = U.u(t, n, x)
            du = U.du(t, n, x)
        if np.any(np.diff(u) <= 0):
            fails.append((int(t), int(n), "u not strictly increasing"))
        if np.any(np.diff(du) >= 0):
            fails.append((int(t), int(n), "du not strictly decreasing (strict concavity)"))
        # far probes so that power fields with alpha close to 1 still show their limits
        with np.errstate(all="ignore"):
            lo_ok = U.du(t, n, 1e-100) > 4.0 * U.du(t, n, 1.0)
            hi_ok = U.du(t, n, 1e100) < 0.25 * U.du(t, n, 1.0)
        if not (lo_ok and hi_ok):
            fails.append((int(t), int(n), "Inada limits not visible on the probe points"))
        k1, k2 = U.K1(x), U.K2(x)
        tol = 1e-12 * np.abs(du)
        if np.any(du < k1 - tol) or np.any(du > k2 + tol):
            j = int(np.argmax((k1 - du > tol) | (du - k2 > tol)))
            fails.append((int(t), int(n), f"envelope violated at x={x[j]:.6g}"))
    ratio = float(U.K2(x[-1]) / U.K1(x[-1]))
    return GridCheck(not fails, fails, ratio)


# ---------------------------------------------------------------------------
# minorant and majorant


class SandwichUtility:
    """Deterministic one-argument utility used as a minorant or majorant.

    ``kind="lower"``: soft minimum of the two concave curves m + int_1^x K2 and
    m + int_1^x K1, which is concave, C^infinity and below both.
    ``kind="upper"``: concave hull of M + int_1^x K1 (x <= 1) and
    M + int_1^x K2 (x >= 1), joined by their common tangent, plus a small
    bounded strictly concave term so the result is strictly concave.
    """

    def __init__(self, kind: str, level: float, K1: Envelope, K2: Envelope, smooth: float = 1e-3):
        self.kind, self.level, self.K1, self.K2 = kind, float(level), K1, K2
        self.smooth = smooth
        if kind == "upper":
            self._tangent()

    def _tangent(self):
        K1, K2, M = self.K1, self.K2, self.level
        if K1 == K2:
            self.x1 = self.x2 = 1.0
            self.slope = float(K1(1.0))
            return

        def gap(logs):
            s = np.exp(logs)
            x1, x2 = float(K1.inverse(s)), float(K2.inverse(s))
            return (M + K1.integral(x1)) + s * (x2 - x1) - (M + K2.integral(x2))

        # x1 <= 1 <= x2 brackets the tangent slope between K1(1) and K2(1)
        a, b = np.log(float(K1(1.0))), np.log(float(K2(1.0)))
        if gap(a) * gap(b) > 0:
            a, b = a - 30, b + 30
        ls = brentq(gap, a, b, xtol=1e-14)
        self.slope = float(np.exp(ls))
        self.x1 = float(K1.inverse(self.slope))
        self.x2 = float(K2.inverse(self.slope))

    def u(self, x):
        x = np.asarray(x, dtype=float)
        out = np.vectorize(self._u_scalar, otypes=[float])(x)
        return out if out.ndim else float(out)

    def _u_scalar(self, x):
        if self.kind == "lower":
            a = self.level + self.K2.integral(x)
            b = self.level + self.K1.integral(x)
            tau = self.smooth * max(1.0, abs(a), abs(b))
            lo = min(a, b)
            return lo - tau * np.log(np.exp(-(a - lo) / tau) + np.exp(-(b - lo) / tau))
        extra = self.smooth * (1.0 - np.exp(-x))
        if x <= self.x1:
            base = self.level + self.K1.integral(x)
        elif x >= self.x2:
            base = self.level + self.K2.integral(x)
        else:
            base = self.level + self.K1.integral(self.x1) + self.slope * (x - self.x1)
        return base + extra

    def du(self, x):
        x = np.asarray(x, dtype=float)
        out = np.vectorize(self._du_scalar, otypes=[float])(x)
        return out if out.ndim else float(out)

    def _du_scalar(self, x):
        if self.kind == "lower":
            a = self.level + self.K2.integral(x)
            b = self.level + self.K1.integral(x)
            tau = self.smooth * max(1.0, abs(a), abs(b))
            lo = min(a, b)
            wa, wb = np.exp(-(a - lo) / tau), np.exp(-(b - lo) / tau)
            return (wa * float(self.K2(x)) + wb * float(self.K1(x))) / (wa + wb)
        extra = self.smooth * np.exp(-x)
        if x <= self.x1:
            return float(self.K1(x)) + extra
        if x >= self.x2:
            return float(self.K2(x)) + extra
        return self.slope + extra

    def i(self, y):
        """Inverse marginal by bisection in log x (du is strictly decreasing)."""

        def f(s):
            return self._du_scalar(np.exp(s)) - y

        a, b = -50.0, 50.0
        return float(np.exp(brentq(f, a, b, xtol=1e-14, maxiter=400)))

    def v(self, y):
        y = np.asarray(y, dtype=float)

        def one(yy):
            x = self.i(yy)
            return self._u_scalar(x) - x * yy

        out = np.vectorize(one, otypes=[float])(y)
        return out if out.ndim else float(out)


def minorant_majorant(U: UtilityField, domain=None, grid=None):
    """(lower, upper) deterministic utilities with lower <= U(t, node, .) <= upper.

    For a field that does not depend on (t, node) both are the field itself
    (as one-argument callables). Otherwise they are built from the envelopes
    and the range of U(t, 1) over ``domain``; the sandwich is then verified
    on ``grid`` and a violation raises UtilityError with the witness point.
    """
    T, Nd = _domain_arrays(domain)
    if U.homogeneous:
        t0, n0 = int(T[0]), int(Nd[0])
        one = _Frozen(U, t0, n0)
        return one, one
    levels = np.array([float(U.u(t, n, 1.0)) for t, n in zip(T, Nd)])
    lower = SandwichUtility("lower", levels.min(), U.K1, U.K2)
    upper = SandwichUtility("upper", levels.max(), U.K1, U.K2)
    if grid is None:
        grid = np.logspace(-3, 3, 61)
    x = np.asarray(grid, dtype=float)
    lo, hi = lower.u(x), upper.u(x)
    for t, n in zip(T, Nd):
        val = U.u(t, n, x)
        tol = 1e-10 * np.maximum(1.0, np.abs(val))
        bad = np.flatnonzero((lo > val + tol) | (val > hi + tol))
        if bad.size:
            j = bad[0]
            raise UtilityError(f"sandwich violated at t={t}, node={n}, x={x[j]:.6g}: envelopes inconsistent with U")
    return lower, upper


class _Frozen:
    """A field evaluated at a fixed (t, node), exposed with the one-argument interface."""

    def __init__(self, U, t, n):
        self.U, self.t, self.n = U, t, n

    def u(self, x):
        return self.U.u(self.t, self.n, x)

    def du(self, x):
        return self.U.du(self.t, self.n, x)

    def i(self, y):
        return self.U.i(self.t, self.n, y)

    def v(self, y):
        return self.U.v(self.t, self.n, y)


# ---------------------------------------------------------------------------
# asymptotic elasticity


@dataclass
class ElasticityReport:
    estimate: float
    tail: float
    reasonably_elastic: bool
    x_max: float
    gamma_checks: dict
    envelope_ratio: float


def asymptotic_elasticity(
    U: UtilityField,
    domain=None,
    x_max: float = 1e6,
    n_grid: int = 121,
    gammas: Sequence[float] | None = None,
    margin: float = 0.01,
) -> ElasticityReport:
    """Estimate AE[U] = limsup x du / u and probe the four gamma-conditions.

    ``estimate`` is the sup over the domain of x du / u at ``x_max``; ``tail``
    extrapolates the last decade linearly in 1/log x to x = inf (exact for
    power and log families). The gamma checks return, per candidate gamma, the
    threshold found by scanning the grid (x0 for the U-side conditions, y0 for
    the V-side ones) or None when the condition fails everywhere.
    """
    T, Nd = _domain_arrays(domain)
    x = np.geomspace(2.0, x_max, n_grid)
    ratios = []
    for t, n in zip(T, Nd):
        u = U.u(t, n, x)
        with np.errstate(all="ignore"):
            r = np.where(u > 0, x * U.du(t, n, x) / u, np.nan)
        ratios.append(r)
    ratios = np.array(ratios)
    if np.all(np.isnan(ratios[:, -1])):
        raise UtilityError("u <= 0 on the whole tail of the grid: elasticity ratio undefined")
    sup = np.nanmax(ratios, axis=0)
    estimate = float(sup[-1])
    x_a = x_max / 10.0
    r_a = float(np.nanmax([x_a * U.du(t, n, x_a) / U.u(t, n, x_a) for t, n in zip(T, Nd)]))
    s_a, s_b = 1.0 / np.log(x_a), 1.0 / np.log(x_max)
    tail = float(estimate - s_b * (r_a - estimate) / (s_a - s_b))
    checks = {}
    for g in gammas or []:
        checks[float(g)] = gamma_conditions(U, g, domain, x_max=x_max)
    k2k1 = float(U.K2(x_max) / U.K1(x_max))
    return ElasticityReport(estimate, tail, tail <= 1.0 - margin, x_max, checks, k2k1)


def gamma_conditions(U: UtilityField, gamma: float, domain=None, x_max: float = 1e6, y_min: float = 1e-8):
    """Grid scan of the four characterisations of AE[U] < gamma.

    Returns a dict with keys "G1".."G4" mapping to the threshold (x0 or y0)
    beyond which the strict inequality holds at every grid point, or None.
    """
    T, Nd = _domain_arrays(domain)
    x = np.geomspace(1.0, x_max, 241)
    y = np.geomspace(y_min, 1.0, 241)
    lams = np.array([1.25, 2.0, 4.0, 10.0])
    rhos = np.array([0.1, 0.25, 0.5, 0.8])
    e = gamma / (1.0 - gamma)
    ok1 = np.ones(x.size, bool)
    ok2 = np.ones(x.size, bool)
    ok3 = np.ones(y.size, bool)
    ok4 = np.ones(y.size, bool)
    for t, n in zip(T, Nd):
        u = U.u(t, n, x)
        ok2 &= U.du(t, n, x) < gamma * u / x
        for lam in lams:
            ok1 &= U.u(t, n, lam * x) < lam**gamma * u
        v = U.v(t, n, y)
        ok4 &= U.i(t, n, y) < e * v / y
        for rho in rhos:
            ok3 &= U.v(t, n, rho * y) < rho ** (-e) * v

    def from_above(ok, grid):
        # smallest grid point after which the condition holds all the way up
        if not ok[-1]:
            return None
        bad = np.flatnonzero(~ok)
        return float(grid[bad[-1] + 1]) if bad.size else float(grid[0])

    def from_below(ok, grid):
        if not ok[0]:
            return None
        bad = np.flatnonzero(~ok)
        return float(grid[bad[0] - 1]) if bad.size else float(grid[-1])

    return {"G1": from_above(ok1, x), "G2": from_above(ok2, x), "G3": from_below(ok3, y), "G4": from_below(ok4, y)}

"""Stein's method for approximation by the mean-one exponential law.

The characterizing operator is ``A f(w) = w f'(w) - (w - 1) f(w)``.  For a
test function ``h`` the Stein equation ``A f = h - E h(Z)`` has the solution

    f(w) = -(e^w / w) * int_w^inf (h(x) - E h(Z)) e^{-x} dx
         = -(T(w) - E h(Z)) / w,        T(w) = E h(w + Z),

and the second form is what gets evaluated: ``T`` is an exponentially
weighted tail integral that stays O(|h|) for every ``w``, so there is no
``e^w`` blow-up.

Bound calculators take a :class:`PairStats` (the five moments of an
exchangeable pair that enter the error bound) and return either the smooth
test-function bound or the Kolmogorov bound with a smoothing width ``delta``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

E = math.e
F_BOUND = 1.0 + 2.0 / E  # ||f|| <= (1 + 2/e) ||h'||
FP_BOUND = 2.0  # ||f'|| <= 2 ||h'||
FPP_H1 = 5.0 - 6.0 / E  # ||f''|| <= (5 - 6/e) ||h'|| + 3 ||h''||
FPP_H2 = 3.0

QUAD_TOL = 1e-9


class QuadratureError(RuntimeError):
    """Raised when an integral cannot be evaluated to the requested tolerance."""

    def __init__(self, message: str, achieved: float = float("nan")):
        super().__init__(message)
        self.achieved = achieved


class ParameterError(ValueError):
    pass


def _as_array_fn(func: Callable) -> Callable[[np.ndarray], np.ndarray]:
    def wrapped(x):
        x = np.asarray(x, dtype=float)
        y = np.asarray(func(x), dtype=float)
        if y.shape != x.shape:
            y = np.broadcast_to(y, x.shape) if y.ndim == 0 else np.vectorize(func, otypes=[float])(x)
        return y

    return wrapped


@dataclass(frozen=True)
class TestFunction:
    """A test function ``h`` on ``[0, inf)`` with its derivative and sup norms.

    ``h`` (and ``h_prime``) must accept numpy arrays.  ``breakpoints`` lists
    points where ``h`` or its first two derivatives are not smooth; they are
    used as quadrature panel edges.  When ``h_prime`` is omitted a central
    difference is used.
    """

    __test__ = False  # not a pytest class

    h: Callable
    h_prime: Optional[Callable] = None
    sup_h_prime: float = math.inf
    sup_h_double_prime: Optional[float] = None
    breakpoints: tuple = ()
    name: str = ""

    def __call__(self, x):
        return _as_array_fn(self.h)(x)

    def derivative(self, x):
        if self.h_prime is not None:
            return _as_array_fn(self.h_prime)(x)
        x = np.asarray(x, dtype=float)
        step = 1e-6 * np.maximum(1.0, np.abs(x))
        hx = _as_array_fn(self.h)
        return (hx(x + step) - hx(np.maximum(x - step, 0.0))) / (x + step - np.maximum(x - step, 0.0))

    def check_norms(self, upper: float = 50.0, points: int = 10_000) -> None:
        """Warn when a finite-difference grid max exceeds the reported norms by >1%."""
        x = np.linspace(0.0, upper, points)
        d1 = np.abs(self.derivative(x))
        if np.isfinite(self.sup_h_prime) and d1.max() > 1.01 * self.sup_h_prime:
            warnings.warn(f"{self.name or 'h'}: grid max |h'| = {d1.max():.6g} > reported {self.sup_h_prime:.6g}")
        if self.sup_h_double_prime is not None:
            d2 = np.abs(np.diff(self.derivative(x)) / np.diff(x))
            if d2.max() > 1.01 * self.sup_h_double_prime:
                warnings.warn(
                    f"{self.name or 'h'}: grid max |h''| = {d2.max():.6g} > reported {self.sup_h_double_prime:.6g}"
                )

    def shifted(self) -> "TestFunction":
        """``h(x) - h(0) - x h'(0)``, which has value and slope zero at the origin.

        The sup norms of the shifted function are recomputed on a fine grid
        (including the breakpoints) since ``||h' - h'(0)||`` can exceed ``||h'||``.
        """
        h0 = float(self(np.array(0.0)))
        d0 = float(self.derivative(np.array(0.0)))
        h, dh = _as_array_fn(self.h), self.derivative

        grid = np.union1d(np.linspace(0.0, 200.0, 400_001), [b for b in self.breakpoints if b >= 0])
        d1 = dh(grid) - d0
        sup1 = float(np.max(np.abs(d1)))
        if self.sup_h_double_prime is not None:
            sup2 = self.sup_h_double_prime
        else:
            sup2 = float(np.max(np.abs(np.diff(d1) / np.diff(grid))))
        return TestFunction(
            h=lambda x: h(x) - h0 - d0 * np.asarray(x, dtype=float),
            h_prime=lambda x: dh(x) - d0,
            sup_h_prime=sup1,
            sup_h_double_prime=sup2,
            breakpoints=self.breakpoints,
            name=f"{self.name}~" if self.name else "",
        )


# --------------------------------------------------------------------------
# exponentially weighted tail integrals

_GL_X, _GL_W = np.polynomial.legendre.leggauss(20)
_GL_X_LO, _GL_W_LO = np.polynomial.legendre.leggauss(12)
_LAG_X, _LAG_W = np.polynomial.laguerre.laggauss(80)
_LAG_X_LO, _LAG_W_LO = np.polynomial.laguerre.laggauss(50)

PANEL = 0.25
MIN_TOP = 40.0
CHUNK = 1 << 16


def _finite_or_raise(x: np.ndarray, y: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(y)
    if bad.any():
        where = float(np.broadcast_to(x, y.shape)[bad].flat[0])
        raise QuadratureError(f"{what} is not finite at x = {where!r}")


class _TailIntegrator:
    """Evaluate ``T(w) = int_0^inf g(w + s) e^{-s} ds`` for arbitrary ``w >= 0``.

    Panels of width <= ``PANEL`` with the function's breakpoints as edges are
    integrated by 20-point Gauss-Legendre; beyond the top node a Gauss-Laguerre
    rule handles the (smooth) remainder.  Node values come from the backward
    recursion ``T(w_i) = int_{w_i}^{w_{i+1}} g(x) e^{-(x - w_i)} dx
    + e^{-(w_{i+1} - w_i)} T(w_{i+1})``, which never forms ``e^{+w}``.
    """

    def __init__(self, g: Callable, breakpoints: Sequence[float] = (), name: str = "h"):
        self.g = g
        self.name = name
        bps = np.array(sorted(b for b in breakpoints if b > 0 and math.isfinite(b)), dtype=float)
        top = max(MIN_TOP, (bps.max() + 10.0) if bps.size else 0.0)
        nodes = np.union1d(np.arange(0.0, top + PANEL / 2, PANEL), bps)
        self.nodes = nodes
        self.top = float(nodes[-1])

        t_top = self._laguerre(np.array([self.top]))[0]
        widths = np.diff(nodes)
        panel = self._panel(nodes[:-1], nodes[1:])
        decay = np.exp(-widths)
        vals = np.empty_like(nodes)
        vals[-1] = t_top
        for i in range(len(nodes) - 2, -1, -1):
            vals[i] = panel[i] + decay[i] * vals[i + 1]
        self.values = vals

    def _eval(self, x: np.ndarray) -> np.ndarray:
        y = self.g(x)
        _finite_or_raise(x, y, self.name)
        return y

    def _laguerre(self, w: np.ndarray, low: bool = False) -> np.ndarray:
        xs, ws = (_LAG_X_LO, _LAG_W_LO) if low else (_LAG_X, _LAG_W)
        return self._eval(w[:, None] + xs[None, :]) @ ws

    def _panel(self, lo: np.ndarray, hi: np.ndarray, low: bool = False) -> np.ndarray:
        """``int_lo^hi g(x) e^{-(x - lo)} dx`` elementwise."""
        xs, ws = (_GL_X_LO, _GL_W_LO) if low else (_GL_X, _GL_W)
        half = 0.5 * (hi - lo)
        x = lo[:, None] + half[:, None] * (xs[None, :] + 1.0)
        y = self._eval(x) * np.exp(-(x - lo[:, None]))
        return half * (y @ ws)

    def error_estimate(self) -> float:
        """Disagreement of the node values with a lower-order rule."""
        nodes = self.nodes
        panel = self._panel(nodes[:-1], nodes[1:], low=True)
        decay = np.exp(-np.diff(nodes))
        v = self._laguerre(np.array([self.top]), low=True)[0]
        err = abs(v - self.values[-1])
        for i in range(len(nodes) - 2, -1, -1):
            v = panel[i] + decay[i] * v
            err = max(err, abs(v - self.values[i]))
        return float(err)

    def __call__(self, w) -> np.ndarray:
        return tails_at((self,), w)[0]


def tails_at(integrators: Sequence[_TailIntegrator], w) -> list:
    """Evaluate several tail integrators sharing one node layout at ``w``.

    The quadrature geometry (abscissas, exponential weights) is computed once
    and reused for every integrand.
    """
    first = integrators[0]
    w = np.asarray(w, dtype=float)
    flat = w.ravel()
    outs = [np.empty_like(flat) for _ in integrators]
    for s in range(0, flat.size, CHUNK):
        ws = flat[s : s + CHUNK]
        far = ws >= first.top
        near = ~far
        wn = ws[near]
        k = np.searchsorted(first.nodes, wn, side="right")
        hi = first.nodes[k]
        half = 0.5 * (hi - wn)
        x = wn[:, None] + half[:, None] * (_GL_X[None, :] + 1.0)
        weight = np.exp(-half[:, None] * (_GL_X[None, :] + 1.0)) * (half[:, None] * _GL_W[None, :])
        decay = np.exp(-(hi - wn))
        for integ, out in zip(integrators, outs):
            seg = out[s : s + CHUNK]
            if far.any():
                seg[far] = integ._laguerre(ws[far])
            if near.any():
                seg[near] = np.einsum("ij,ij->i", integ._eval(x), weight) + decay * integ.values[k]
    return [o.reshape(w.shape) for o in outs]


def exp_expectation(h, tol: float = QUAD_TOL) -> float:
    """``E h(Z) = int_0^inf h(x) e^{-x} dx`` for ``Z ~ Exp(1)``.

    ``h`` may be a :class:`TestFunction` (its breakpoints are used) or any
    vectorized callable.  Raises :class:`QuadratureError` if ``h`` is not
    finite at a quadrature abscissa or the rule disagrees with a lower-order
    rule by more than ``tol``.
    """
    breakpoints = h.breakpoints if isinstance(h, TestFunction) else ()
    integ = _TailIntegrator(_as_array_fn(h), breakpoints)
    err = integ.error_estimate()
    if err > tol:
        raise QuadratureError(f"E h(Z) not converged: estimated error {err:.3e} > {tol:.1e}", err)
    return float(integ.values[0])


def stein_operator(f: Callable, f_prime: Callable, w):
    """``w f'(w) - (w - 1) f(w)``."""
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise ParameterError("the exponential Stein operator is defined for w >= 0")
    fw, dfw = np.asarray(f(w), dtype=float), np.asarray(f_prime(w), dtype=float)
    if not (np.all(np.isfinite(fw)) and np.all(np.isfinite(dfw)) and np.all(np.isfinite(w))):
        raise ParameterError("non-finite input to the Stein operator")
    out = w * dfw - (w - 1.0) * fw
    return float(out) if out.ndim == 0 else out


SMALL_W = 1e-6


@dataclass
class SteinSolution:
    """Solution ``f_h`` of ``w f'(w) - (w - 1) f(w) = h(w) - E h(Z)``.

    Built by :func:`solve_stein`.  ``f`` and ``f_prime`` accept scalars or
    arrays.  ``f_prime`` differentiates the integral form directly using
    ``h'``; ``f_prime_ode`` instead reads ``f'`` off the differential
    equation.  The two are independent routes and agree to quadrature
    accuracy.

    For ``w < SMALL_W`` both use first-order Taylor data at the origin,
    ``f(0) = h(0) - E h(Z)`` and ``f'(0) = (h'(0) + f(0)) / 2``; the
    pointwise error there is at most ``SMALL_W * ||f''||``.
    """

    h: TestFunction
    exp_mean_h: float
    tol: float = QUAD_TOL
    _tail_h: _TailIntegrator = field(repr=False, default=None)
    _tail_dh: _TailIntegrator = field(repr=False, default=None)

    def __post_init__(self):
        self._h0 = float(self.h(np.array(0.0)))
        self._dh0 = float(self.h.derivative(np.array(0.0)))
        self._f0 = self._h0 - self.exp_mean_h
        self._df0 = 0.5 * (self._dh0 + self._f0)

    def _split(self, w):
        w = np.asarray(w, dtype=float)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ParameterError("Stein solution is evaluated on finite w >= 0")
        return w, w < SMALL_W

    def f(self, w):
        w, small = self._split(w)
        ws = np.where(small, 1.0, w)
        out = -(self._tail_h(ws) - self.exp_mean_h) / ws
        out = np.where(small, self._f0 + w * self._df0, out)
        return float(out) if out.ndim == 0 else out

    def f_prime(self, w):
        """``f'(w) = -(f(w) + E h'(w + Z)) / w``."""
        w, small = self._split(w)
        ws = np.where(small, 1.0, w)
        out = -(np.asarray(self.f(ws)) + self._tail_dh(ws)) / ws
        out = np.where(small, self._df0, out)
        return float(out) if out.ndim == 0 else out

    def evaluate(self, w):
        """``(f(w), f'(w))`` in one pass; cheaper than two separate calls."""
        w, small = self._split(w)
        ws = np.where(small, 1.0, w)
        th, tdh = tails_at((self._tail_h, self._tail_dh), ws)
        fw = -(th - self.exp_mean_h) / ws
        dfw = -(fw + tdh) / ws
        fw = np.where(small, self._f0 + w * self._df0, fw)
        dfw = np.where(small, self._df0, dfw)
        return fw, dfw

    def f_prime_ode(self, w):
        """``f'(w) = h(w)/w - ((1 - w) f(w) + E h(Z)) / w``."""
        w, small = self._split(w)
        ws = np.where(small, 1.0, w)
        out = self.h(ws) / ws - ((1.0 - ws) * np.asarray(self.f(ws)) + self.exp_mean_h) / ws
        out = np.where(small, self._df0, out)
        return float(out) if out.ndim == 0 else out

    def f_double_prime(self, w):
        """Central difference of :meth:`f_prime_ode` with step ``1e-4 max(1, w)``."""
        w, _ = self._split(w)
        step = 1e-4 * np.maximum(1.0, w)
        lo = np.maximum(w - step, 0.0)
        hi = w + step
        out = (np.asarray(self.f_prime_ode(hi)) - np.asarray(self.f_prime_ode(lo))) / (hi - lo)
        return float(out) if out.ndim == 0 else out

    def residual(self, w):
        """``w f'(w) - (w - 1) f(w) - (h(w) - E h(Z))``."""
        w = np.asarray(w, dtype=float)
        out = stein_operator(self.f, self.f_prime, w) - (self.h(w) - self.exp_mean_h)
        return float(out) if np.ndim(out) == 0 else out


def solve_stein(h: TestFunction, tol: float = QUAD_TOL) -> SteinSolution:
    """Build the Stein solution for ``h`` (see :class:`SteinSolution`)."""
    if not isinstance(h, TestFunction):
        h = TestFunction(h)
    tail_h = _TailIntegrator(h, h.breakpoints, name=h.name or "h")
    tail_dh = _TailIntegrator(h.derivative, h.breakpoints, name=(h.name or "h") + "'")
    err = max(tail_h.error_estimate(), tail_dh.error_estimate())
    if err > tol:
        raise QuadratureError(
            f"Stein solution for {h.name or 'h'} not converged: estimated error {err:.3e} > {tol:.1e}",
            err,
        )
    return SteinSolution(h, float(tail_h.values[0]), tol, tail_h, tail_dh)


@dataclass
class SolutionBoundsReport:
    ratio_f: float
    ratio_f_prime: float
    ratio_f_double_prime: float
    sup_f: float
    sup_f_prime: float
    sup_f_double_prime: float

    @property
    def ok(self) -> bool:
        return max(self.ratio_f, self.ratio_f_prime, self.ratio_f_double_prime) <= 1.0 + 1e-6


def _ratio(value: float, bound: float) -> float:
    if bound > 0:
        return value / bound
    return 0.0 if value <= 1e-12 else math.inf


def verify_solution_bounds(h: TestFunction, grid) -> SolutionBoundsReport:
    """Compare grid maxima of ``|f|``, ``|f'|``, ``|f''|`` with the solution bounds.

    ``h`` must satisfy ``h(0) = h'(0) = 0`` (use :meth:`TestFunction.shifted`).
    ``f'`` is taken from the differential equation, ``f''`` by central
    differences of it.
    """
    grid = np.asarray(grid, dtype=float)
    if np.any(grid < 0):
        raise ParameterError("evaluation grid must lie in [0, inf)")
    if h.sup_h_double_prime is None:
        raise ParameterError("the f'' bound needs sup |h''|")
    sol = solve_stein(h)
    sf = float(np.max(np.abs(sol.f(grid)))) if grid.size else 0.0
    sfp = float(np.max(np.abs(sol.f_prime_ode(grid)))) if grid.size else 0.0
    sfpp = float(np.max(np.abs(sol.f_double_prime(grid)))) if grid.size else 0.0
    n1, n2 = h.sup_h_prime, h.sup_h_double_prime
    return SolutionBoundsReport(
        ratio_f=_ratio(sf, F_BOUND * n1),
        ratio_f_prime=_ratio(sfp, FP_BOUND * n1),
        ratio_f_double_prime=_ratio(sfpp, FPP_H1 * n1 + FPP_H2 * n2),
        sup_f=sf,
        sup_f_prime=sfp,
        sup_f_double_prime=sfpp,
    )


# --------------------------------------------------------------------------
# smoothing functions


@dataclass(frozen=True)
class SmoothingParams:
    t: float
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ParameterError(f"smoothing width must be positive, got {self.delta}")
        if not self.t >= 0:
            raise ParameterError(f"threshold must be >= 0, got {self.t}")


def smoothing_h(p: SmoothingParams, x):
    """C^1 piecewise-quadratic step from 1 (``x <= t - delta``) to 0 (``x > t``)."""
    x = np.asarray(x, dtype=float)
    t, d = p.t, p.delta
    out = np.where(
        x <= t - d,
        1.0,
        np.where(
            x <= t - d / 2,
            1.0 - 2.0 * (x - t + d) ** 2 / d**2,
            np.where(x <= t, 2.0 * (x - t) ** 2 / d**2, 0.0),
        ),
    )
    return float(out) if out.ndim == 0 else out


def smoothing_h_prime(p: SmoothingParams, x):
    x = np.asarray(x, dtype=float)
    t, d = p.t, p.delta
    out = np.where(
        x <= t - d,
        0.0,
        np.where(x <= t - d / 2, -4.0 * (x - t + d) / d**2, np.where(x <= t, 4.0 * (x - t) / d**2, 0.0)),
    )
    return float(out) if out.ndim == 0 else out


def smoothing_test_function(t: float, delta: float) -> TestFunction:
    """``h_{t,delta}`` packaged with its derivative, norms and breakpoints."""
    p = SmoothingParams(t, delta)
    return TestFunction(
        h=lambda x: smoothing_h(p, x),
        h_prime=lambda x: smoothing_h_prime(p, x),
        sup_h_prime=2.0 / delta,
        sup_h_double_prime=4.0 / delta**2,
        breakpoints=(t - delta, t - delta / 2, t),
        name=f"h[t={t:g},delta={delta:g}]",
    )


def smoothing_exp_mean(t: float, delta: float) -> float:
    """``E h_{t,delta}(Z)`` by quadrature."""
    return exp_expectation(smoothing_test_function(t, delta))


# --------------------------------------------------------------------------
# bounds


@dataclass(frozen=True)
class PairStats:
    """Moments of an exchangeable pair ``(W, W')`` entering the error bounds.

    a: coefficient in ``E[W' - W | F] = -a (W - 1) + R``
    t1: ``E|W - E[(W' - W)^2 | F] / (2a)|``
    mean_gap: ``|E W - 1|``
    third_abs: ``E|W' - W|^3``
    remainder_abs: ``E|R|``
    """

    a: float
    t1: float = 0.0
    mean_gap: float = 0.0
    third_abs: float = 0.0
    remainder_abs: float = 0.0

    def __post_init__(self):
        vals = (self.a, self.t1, self.mean_gap, self.third_abs, self.remainder_abs)
        if not all(math.isfinite(v) for v in vals):
            raise ParameterError("pair statistics must be finite")
        if not self.a > 0:
            raise ParameterError(f"linearity coefficient a must be positive, got {self.a}")
        if min(vals[1:]) < 0:
            raise ParameterError("pair statistics must be non-negative")

    def coefficients(self) -> tuple[float, float]:
        """``(A, B)`` with the Kolmogorov bound equal to ``A/delta + B/delta^2 + delta/2``."""
        A = 8.0 * self.t1 + 2.0 * self.mean_gap + FPP_H1 * self.third_abs / self.a + 8.0 * self.remainder_abs / self.a
        B = 3.0 * self.third_abs / self.a
        return A, B


TERM_NAMES = ("t1_term", "mean_term", "third_term", "remainder_term", "delta_half")


@dataclass(frozen=True)
class BoundReport:
    delta: float
    bound: float
    terms: tuple

    def as_dict(self) -> dict:
        return {"delta": self.delta, "bound": self.bound, "terms": dict(zip(TERM_NAMES, self.terms))}

    def to_json(self) -> str:
        return json.dumps(self.as_dict())

    @classmethod
    def from_json(cls, text: str) -> "BoundReport":
        d = json.loads(text)
        return cls(d["delta"], d["bound"], tuple(d["terms"][k] for k in TERM_NAMES))


def smooth_bound(stats: PairStats, h_norms: tuple[float, float]) -> float:
    """Bound on ``|E h(W) - E h(Z)|`` for ``h`` with sup norms ``(||h'||, ||h''||)``."""
    n1, n2 = h_norms
    a = stats.a
    return (
        4.0 * n1 * stats.t1
        + n1 * stats.mean_gap
        + (2.0 * FPP_H1 * n1 + 3.0 * n2) * stats.third_abs / (4.0 * a)
        + 4.0 * n1 * stats.remainder_abs / a
    )


def kolmogorov_bound(stats: PairStats, delta: float) -> BoundReport:
    """Kolmogorov-distance bound at smoothing width ``delta``, term by term."""
    if not delta > 0:
        raise ParameterError(f"delta must be positive, got {delta}")
    a = stats.a
    terms = (
        8.0 / delta * stats.t1,
        2.0 / delta * stats.mean_gap,
        (FPP_H1 / delta + 3.0 / delta**2) * stats.third_abs / a,
        8.0 / delta * stats.remainder_abs / a,
        delta / 2.0,
    )
    return BoundReport(delta, math.fsum(terms), terms)


def optimize_delta(stats: PairStats) -> tuple[float, BoundReport]:
    """Minimize the Kolmogorov bound over ``delta > 0``.

    The objective is ``A/delta + B/delta^2 + delta/2``; its stationary point
    solves ``delta^3 / 2 = A delta + 2B``.  If every statistic is zero the
    infimum 0 is approached as ``delta -> 0`` and ``(0.0, zero report)`` is
    returned.
    """
    A, B = stats.coefficients()
    if A == 0 and B == 0:
        return 0.0, BoundReport(0.0, 0.0, (0.0,) * 5)
    if B == 0:
        delta = math.sqrt(2.0 * A)
    else:
        # with m = max(sqrt(2A), (4B)^(1/3)) the cubic is <= 0 at m and > 0 at 2m
        m = max(math.sqrt(2.0 * A), (4.0 * B) ** (1.0 / 3.0))
        cubic = lambda d: d**3 / 2 - A * d - 2 * B  # noqa: E731
        # rounding can leave cubic(m) a hair above 0; m is then the root
        delta = m if cubic(m) >= 0 else brentq(cubic, m, 2.0 * m, rtol=1e-15, maxiter=200)
    return delta, kolmogorov_bound(stats, delta)

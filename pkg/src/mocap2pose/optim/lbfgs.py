"""Limited-memory BFGS with a strong-Wolfe line search."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

logger = logging.getLogger(__name__)


class ObjectiveEval(NamedTuple):
    value: float
    gradient: np.ndarray


Objective = Callable[[np.ndarray], "ObjectiveEval | tuple[float, np.ndarray]"]


class OptimizationError(RuntimeError):
    pass


@dataclass
class LbfgsConfig:
    history_size: int | None = 10  # None keeps every pair (full BFGS on quadratics)
    max_iterations: int = 200
    gradient_tolerance: float = 1e-8  # on the max-norm of the gradient
    function_tolerance: float = 0.0  # relative decrease below which we stop; 0 disables
    c1: float = 1e-4
    c2: float = 0.9
    step_max: float = np.inf  # cap on the Euclidean length of a step
    max_line_search: int = 30
    max_backtracks: int = 30  # non-finite evaluations tolerated per line search

    def __post_init__(self):
        if self.history_size is not None and self.history_size < 1:
            raise ValueError("history_size must be >= 1")
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError("need 0 < c1 < c2 < 1")


@dataclass
class OptimizeResult:
    x: np.ndarray
    value: float
    iterations: int
    converged: bool
    message: str = ""
    n_evals: int = 0
    history: list[float] = field(default_factory=list)


def _call(fun: Objective, x: np.ndarray) -> tuple[float, np.ndarray]:
    val, grad = fun(x)
    return float(val), np.asarray(grad, dtype=float)


def _finite(val: float, grad: np.ndarray) -> bool:
    return np.isfinite(val) and bool(np.all(np.isfinite(grad)))


def _cubic_min(a, fa, ga, b, fb, gb):
    """Minimiser of the cubic interpolating (a, fa, ga) and (b, fb, gb), or None."""
    d1 = ga + gb - 3 * (fa - fb) / (a - b)
    disc = d1 * d1 - ga * gb
    if disc < 0:
        return None
    d2 = np.sign(b - a) * np.sqrt(disc)
    den = gb - ga + 2 * d2
    if den == 0:
        return None
    return b - (b - a) * (gb + d2 - d1) / den


class _LineSearch:
    def __init__(self, fun, x, d, f0, g0, cfg: LbfgsConfig):
        self.fun, self.x, self.d, self.cfg = fun, x, d, cfg
        self.f0, self.dphi0 = f0, float(g0 @ d)
        self.n_evals = 0
        self.best = None  # (alpha, f, g) with lowest f seen

    def phi(self, a):
        for _ in range(self.cfg.max_backtracks + 1):
            f, g = _call(self.fun, self.x + a * self.d)
            self.n_evals += 1
            if _finite(f, g):
                if self.best is None or f < self.best[1]:
                    self.best = (a, f, g)
                return a, f, g, float(g @ self.d)
            a *= 0.5
        raise OptimizationError("objective stayed non-finite after repeated backtracking")

    def _roundoff_accept(self, f, dphi):
        # Near the optimum the expected decrease drops below the resolution of
        # f. A point whose value matches f0 to within a few ulps and which
        # satisfies the curvature condition is accepted so the gradient can
        # still be driven down.
        ulps = 8 * np.finfo(float).eps * max(abs(self.f0), 1e-300)
        return f <= self.f0 + ulps and abs(dphi) <= -self.cfg.c2 * self.dphi0

    def search(self, a_init, a_max):
        c1, c2 = self.cfg.c1, self.cfg.c2
        a_prev, f_prev, dphi_prev = 0.0, self.f0, self.dphi0
        a = min(a_init, a_max)
        for i in range(self.cfg.max_line_search):
            a, f, g, dphi = self.phi(a)
            if self._roundoff_accept(f, dphi):
                return a, f, g
            if f > self.f0 + c1 * a * self.dphi0 or (i > 0 and f >= f_prev):
                return self.zoom(a_prev, f_prev, dphi_prev, a, f, dphi)
            if abs(dphi) <= -c2 * self.dphi0:
                return a, f, g
            if dphi >= 0:
                return self.zoom(a, f, dphi, a_prev, f_prev, dphi_prev)
            if a >= a_max:
                return a, f, g
            a_prev, f_prev, dphi_prev = a, f, dphi
            a = min(2.0 * a, a_max)
        return None

    def zoom(self, lo, f_lo, d_lo, hi, f_hi, d_hi):
        c1, c2 = self.cfg.c1, self.cfg.c2
        for _ in range(self.cfg.max_line_search):
            a = _cubic_min(lo, f_lo, d_lo, hi, f_hi, d_hi)
            width = abs(hi - lo)
            if a is None or not np.isfinite(a) or abs(a - lo) < 0.1 * width or abs(a - hi) < 0.1 * width:
                a = 0.5 * (lo + hi)
            a, f, g, dphi = self.phi(a)
            if self._roundoff_accept(f, dphi):
                return a, f, g
            if f > self.f0 + c1 * a * self.dphi0 or f >= f_lo:
                hi, f_hi, d_hi = a, f, dphi
            else:
                if abs(dphi) <= -c2 * self.dphi0:
                    return a, f, g
                if dphi * (hi - lo) >= 0:
                    hi, f_hi, d_hi = lo, f_lo, d_lo
                lo, f_lo, d_lo = a, f, dphi
            if width < 1e-16 * max(1.0, abs(lo)):
                break
        return None


def lbfgs_minimize(fun: Objective, x0: np.ndarray, config: LbfgsConfig | None = None,
                   callback: Callable[[np.ndarray, float], None] | None = None) -> OptimizeResult:
    """Minimise ``fun`` (returning value and gradient) from ``x0``.

    Accepted iterates never increase the objective beyond a few ulps of
    floating-point resolution. If the strong-Wolfe search
    fails, the best Armijo point seen is taken; if there is none the memory is
    cleared and a steepest-descent step is tried before giving up.
    """
    cfg = config or LbfgsConfig()
    x = np.array(x0, dtype=float, copy=True)
    f, g = _call(fun, x)
    n_evals = 1
    if not _finite(f, g):
        raise OptimizationError("objective is not finite at the starting point")
    history = [f]
    mem: deque = deque(maxlen=cfg.history_size)
    if np.max(np.abs(g), initial=0.0) < cfg.gradient_tolerance:
        return OptimizeResult(x, f, 0, True, "gradient below tolerance at start", n_evals, history)

    it = 0
    message = "maximum iterations reached"
    converged = False
    retried = False
    while it < cfg.max_iterations:
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in reversed(mem):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if mem:
            s, y, _ = mem[-1]
            q *= (s @ y) / (y @ y)
        else:
            q /= max(np.linalg.norm(g), 1.0)
        for (s, y, rho), a in zip(mem, reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        d = -q
        if g @ d >= 0:  # not a descent direction
            mem.clear()
            d = -g / max(np.linalg.norm(g), 1.0)
        dnorm = np.linalg.norm(d)
        a_max = cfg.step_max / dnorm if np.isfinite(cfg.step_max) else 1e10
        ls = _LineSearch(fun, x, d, f, g, cfg)
        try:
            res = ls.search(1.0, a_max)
        except OptimizationError as exc:
            message = str(exc)
            n_evals += ls.n_evals
            logger.warning("L-BFGS aborted: %s", exc)
            break
        n_evals += ls.n_evals
        if res is None and ls.best is not None and ls.best[1] < f + cfg.c1 * ls.best[0] * ls.dphi0:
            res = ls.best
        if res is None:
            if mem and not retried:
                mem.clear()
                retried = True
                continue
            message = "line search failed to find a decrease"
            converged = np.max(np.abs(g)) < max(cfg.gradient_tolerance, 1e-8 * max(1.0, abs(f)))
            break
        retried = False
        a, f_new, g_new = res
        s = a * d
        y = g_new - g
        sy = s @ y
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            mem.append((s, y, 1.0 / sy))
        x = x + s
        f_old, f, g = f, f_new, g_new
        it += 1
        history.append(f)
        if callback is not None:
            callback(x, f)
        if np.max(np.abs(g)) < cfg.gradient_tolerance:
            converged, message = True, "gradient below tolerance"
            break
        if cfg.function_tolerance > 0 and (f_old - f) <= cfg.function_tolerance * max(abs(f_old), abs(f), 1.0):
            converged, message = True, "relative decrease below tolerance"
            break
    return OptimizeResult(x, f, it, converged, message, n_evals, history)

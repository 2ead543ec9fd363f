from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lbfgs import Objective, OptimizationError, OptimizeResult, _call, _finite


@dataclass
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_iterations: int = 1000
    gradient_tolerance: float = 0.0
    return_best: bool = True  # hand back the lowest-value iterate, not the last one
    max_backtracks: int = 30

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")


def adam_minimize(fun: Objective, x0: np.ndarray, config: AdamConfig | None = None) -> OptimizeResult:
    """Bias-corrected Adam.

    A step that lands on a non-finite value is halved (at most
    ``max_backtracks`` times) before the run is aborted.
    """
    cfg = config or AdamConfig()
    x = np.array(x0, dtype=float, copy=True)
    f, g = _call(fun, x)
    if not _finite(f, g):
        raise OptimizationError("objective is not finite at the starting point")
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    best_x, best_f = x.copy(), f
    history = [f]
    n_evals = 1
    converged, message = False, "maximum iterations reached"
    it = 0
    while it < cfg.max_iterations:
        if np.max(np.abs(g), initial=0.0) <= cfg.gradient_tolerance:
            converged, message = True, "gradient below tolerance"
            break
        it += 1
        m = cfg.beta1 * m + (1 - cfg.beta1) * g
        v = cfg.beta2 * v + (1 - cfg.beta2) * g * g
        m_hat = m / (1 - cfg.beta1 ** it)
        v_hat = v / (1 - cfg.beta2 ** it)
        step = cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon)
        for _ in range(cfg.max_backtracks + 1):
            f_new, g_new = _call(fun, x - step)
            n_evals += 1
            if _finite(f_new, g_new):
                break
            step = 0.5 * step
        else:
            message = "objective stayed non-finite after repeated backtracking"
            break
        x = x - step
        f, g = f_new, g_new
        history.append(f)
        if f < best_f:
            best_x, best_f = x.copy(), f
    if cfg.return_best and best_f < f:
        return OptimizeResult(best_x, best_f, it, converged, message, n_evals, history)
    return OptimizeResult(x, f, it, converged, message, n_evals, history)

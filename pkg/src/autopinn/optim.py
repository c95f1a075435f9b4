"""Adam and L-BFGS on flat parameter vectors.

Both work on plain numpy vectors so the PINN trainer and the architecture
controller can share them.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))


def adam_step(state: AdamState, params, grads, t: int, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update (descent).  Returns ``(state, params)``.

    Inputs are not modified.
    """
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * (grads * grads)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return AdamState(m, v), params - lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class LbfgsResult:
    x: np.ndarray
    fun: float
    iterations: int
    reason: str
    history: list[float] = field(default_factory=list)


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        q -= a * y
        alphas.append((rho, a))
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def lbfgs_minimize(fun: Callable, x0, history_size=10, max_iter=500, grad_tol=1e-8,
                   rel_tol=1e-10, c1=1e-4, shrink=0.5, max_backtracks=25,
                   curvature_eps=1e-10) -> LbfgsResult:
    """Limited-memory BFGS with Armijo backtracking.

    ``fun(x)`` returns ``(f, grad)``; a non-finite ``f`` is treated as a
    rejected trial point.  Stops on small gradient norm, small relative loss
    change, ``max_iter``, or a failed line search, and always returns the
    best point seen.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    if not np.isfinite(f):
        raise ValueError("objective is not finite at the initial point")
    history = [float(f)]
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []
    if np.linalg.norm(g) < grad_tol:
        return LbfgsResult(x, float(f), 0, "grad_tol", history)

    reason = "max_iter"
    it = 0
    while it < max_iter:
        d = _two_loop(g, s_hist, y_hist)
        if not s_hist:
            d /= max(1.0, float(np.linalg.norm(g)))
        slope = float(g @ d)
        if not slope < 0:
            s_hist.clear()
            y_hist.clear()
            d = -g / max(1.0, float(np.linalg.norm(g)))
            slope = float(g @ d)

        t = 1.0
        accepted = False
        for _ in range(max_backtracks + 1):
            x_new = x + t * d
            f_new, g_new = fun(x_new)
            if np.isfinite(f_new) and f_new <= f + c1 * t * slope:
                accepted = True
                break
            t *= shrink
        if not accepted:
            reason = "line_search_failed"
            break

        it += 1
        s, y = x_new - x, g_new - g
        if y @ s > curvature_eps:
            s_hist.append(s)
            y_hist.append(y)
            if len(s_hist) > history_size:
                s_hist.pop(0)
                y_hist.pop(0)
        change = (f - f_new) / max(abs(f), abs(f_new), 1.0)
        x, f, g = x_new, f_new, g_new
        history.append(float(f))
        if np.linalg.norm(g) < grad_tol:
            reason = "grad_tol"
            break
        if change < rel_tol:
            reason = "rel_tol"
            break
    return LbfgsResult(x, float(f), it, reason, history)

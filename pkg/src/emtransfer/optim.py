"""Limited-memory quasi-Newton minimizer for smooth unconstrained problems.

Implements L-BFGS with a strong-Wolfe line search (sufficient decrease plus
curvature condition, cubic interpolation in the zoom phase). The line search
is exact on quadratics, so on a convex quadratic of dimension <= memory the
iteration behaves like conjugate gradients and converges in at most
``dimension`` steps.

The objective is a callable ``f(x) -> (value, gradient)`` over a flat
parameter vector. Matrix-valued parameters are flattened row-major by the
callers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

CONVERGED = "converged"
BUDGET_EXHAUSTED = "budget_exhausted"
LINE_SEARCH_FAILED = "line_search_failed"
NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SolverConfig:
    """Termination and line-search constants for :func:`minimize`."""

    gradient_tolerance: float = 1e-6
    max_evaluations: int = 1000
    memory: int = 10
    sufficient_decrease: float = 1e-4
    curvature: float = 0.9

    def __post_init__(self):
        if not self.gradient_tolerance > 0:
            raise InvalidInputError("gradient_tolerance must be positive")
        if self.max_evaluations < 1:
            raise InvalidInputError("max_evaluations must be at least 1")
        if self.memory < 1:
            raise InvalidInputError("memory must be at least 1")
        if not 0 < self.sufficient_decrease < self.curvature < 1:
            raise InvalidInputError("need 0 < sufficient_decrease < curvature < 1")


@dataclass(frozen=True)
class SolveResult:
    """Outcome of a :func:`minimize` call.

    ``value_trace`` holds the objective at every accepted iterate, starting
    from the initial point; it is non-increasing by construction.
    """

    x: np.ndarray
    value: float
    gradient_norm: float
    status: str
    evaluations: int
    iterations: int
    value_trace: tuple

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED


class _BudgetExhausted(Exception):
    pass


class _NonFiniteEvaluation(Exception):
    pass


class _Evaluator:
    """Counts objective calls, enforcing the budget and finiteness."""

    def __init__(self, objective, budget):
        self.objective = objective
        self.budget = budget
        self.count = 0

    def __call__(self, x):
        if self.count >= self.budget:
            raise _BudgetExhausted
        self.count += 1
        value, grad = self.objective(x)
        value = float(value)
        grad = np.asarray(grad, dtype=float)
        if not math.isfinite(value) or not np.all(np.isfinite(grad)):
            raise _NonFiniteEvaluation
        return value, grad


def _cubic_step(a_lo, f_lo, g_lo, a_hi, f_hi, g_hi):
    """Minimizer of the cubic interpolant; exact for quadratic objectives."""
    d1 = g_lo + g_hi - 3.0 * (f_lo - f_hi) / (a_lo - a_hi)
    disc = d1 * d1 - g_lo * g_hi
    if disc < 0.0:
        return None
    d2 = math.copysign(math.sqrt(disc), a_hi - a_lo)
    denom = g_hi - g_lo + 2.0 * d2
    if denom == 0.0:
        return None
    return a_hi - (a_hi - a_lo) * (g_hi + d2 - d1) / denom


def _zoom(evaluate, x, d, f0, dphi0, c1, c2,
          a_lo, f_lo, g_lo, a_hi, f_hi, g_hi, max_steps=50):
    for _ in range(max_steps):
        a = _cubic_step(a_lo, f_lo, g_lo, a_hi, f_hi, g_hi)
        lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
        width = hi - lo
        if a is None or not (lo + 1e-3 * width <= a <= hi - 1e-3 * width):
            a = 0.5 * (a_lo + a_hi)
        f_a, grad_a = evaluate(x + a * d)
        g_a = float(grad_a @ d)
        if f_a > f0 + c1 * a * dphi0 or f_a >= f_lo:
            a_hi, f_hi, g_hi = a, f_a, g_a
        else:
            if abs(g_a) <= -c2 * dphi0:
                return a, f_a, grad_a
            if g_a * (a_hi - a_lo) >= 0.0:
                a_hi, f_hi, g_hi = a_lo, f_lo, g_lo
            a_lo, f_lo, g_lo = a, f_a, g_a
        if abs(a_hi - a_lo) < 1e-16 * max(1.0, abs(a_lo)):
            break
    return None


def _line_search(evaluate, x, d, f0, grad0, c1, c2, first_step, max_expand=30):
    """Strong-Wolfe line search; returns (step, value, gradient) or None."""
    dphi0 = float(grad0 @ d)
    if dphi0 >= 0.0:
        return None
    a_prev, f_prev, g_prev = 0.0, f0, dphi0
    a = first_step
    for i in range(max_expand):
        f_a, grad_a = evaluate(x + a * d)
        g_a = float(grad_a @ d)
        if f_a > f0 + c1 * a * dphi0 or (i > 0 and f_a >= f_prev):
            return _zoom(evaluate, x, d, f0, dphi0, c1, c2,
                         a_prev, f_prev, g_prev, a, f_a, g_a)
        if abs(g_a) <= -c2 * dphi0:
            return a, f_a, grad_a
        if g_a >= 0.0:
            return _zoom(evaluate, x, d, f0, dphi0, c1, c2,
                         a, f_a, g_a, a_prev, f_prev, g_prev)
        a_prev, f_prev, g_prev = a, f_a, g_a
        a *= 2.0
    return None


def _two_loop(grad, history):
    q = grad.copy()
    alphas = []
    for s, y, rho in reversed(history):
        alpha = rho * float(s @ q)
        q -= alpha * y
        alphas.append(alpha)
    s, y, _ = history[-1]
    q *= float(s @ y) / float(y @ y)
    for (s, y, rho), alpha in zip(history, reversed(alphas)):
        beta = rho * float(y @ q)
        q += (alpha - beta) * s
    return q


def minimize(objective, x0, config: SolverConfig = SolverConfig()) -> SolveResult:
    """Minimize ``objective`` starting at ``x0``.

    Returns a :class:`SolveResult` whose status is ``converged`` when the
    max-norm of the gradient drops to ``config.gradient_tolerance``,
    ``budget_exhausted`` when ``max_evaluations`` objective calls were spent,
    ``line_search_failed`` when no acceptable step exists (e.g. inconsistent
    gradients) and ``numerical_failure`` when a non-finite value or gradient
    was encountered; in every case the best iterate found so far is returned.
    """
    x = np.asarray(x0, dtype=float).copy()
    evaluate = _Evaluator(objective, config.max_evaluations)
    trace = []

    def result(status, f, g_norm, iterations):
        return SolveResult(x=x, value=f, gradient_norm=g_norm, status=status,
                           evaluations=evaluate.count, iterations=iterations,
                           value_trace=tuple(trace))

    try:
        f, grad = evaluate(x)
    except _NonFiniteEvaluation:
        return SolveResult(x=x, value=math.nan, gradient_norm=math.nan,
                           status=NUMERICAL_FAILURE, evaluations=evaluate.count,
                           iterations=0, value_trace=())
    trace.append(f)
    history: list = []
    iterations = 0
    while True:
        g_norm = float(np.max(np.abs(grad))) if grad.size else 0.0
        if g_norm <= config.gradient_tolerance:
            return result(CONVERGED, f, g_norm, iterations)
        if history:
            d = -_two_loop(grad, history)
            first_step = 1.0
        else:
            d = -grad
            first_step = min(1.0, 1.0 / g_norm)
        if float(grad @ d) >= 0.0:
            history.clear()
            d = -grad
            first_step = min(1.0, 1.0 / g_norm)
        try:
            hit = _line_search(evaluate, x, d, f, grad,
                               config.sufficient_decrease, config.curvature,
                               first_step)
        except _BudgetExhausted:
            return result(BUDGET_EXHAUSTED, f, g_norm, iterations)
        except _NonFiniteEvaluation:
            return result(NUMERICAL_FAILURE, f, g_norm, iterations)
        if hit is None:
            return result(LINE_SEARCH_FAILED, f, g_norm, iterations)
        step, f_new, grad_new = hit
        # One secant refinement toward the zero of the directional slope.
        # Exact for quadratics, which keeps the iteration CG-equivalent there.
        dphi0 = float(grad @ d)
        dphi_new = float(grad_new @ d)
        if abs(dphi_new) > 1e-2 * abs(dphi0) and dphi_new != dphi0:
            refined = step - dphi_new * step / (dphi_new - dphi0)
            if math.isfinite(refined) and refined > 0.0:
                try:
                    f_ref, grad_ref = evaluate(x + refined * d)
                except _BudgetExhausted:
                    return result(BUDGET_EXHAUSTED, f, g_norm, iterations)
                except _NonFiniteEvaluation:
                    return result(NUMERICAL_FAILURE, f, g_norm, iterations)
                if (f_ref <= f + config.sufficient_decrease * refined * dphi0
                        and f_ref < f_new):
                    step, f_new, grad_new = refined, f_ref, grad_ref
        s = step * d
        y = grad_new - grad
        sy = float(s @ y)
        if sy > 1e-12 * float(np.linalg.norm(s)) * float(np.linalg.norm(y)):
            history.append((s, y, 1.0 / sy))
            if len(history) > config.memory:
                history.pop(0)
        x = x + s
        f, grad = f_new, grad_new
        trace.append(f)
        iterations += 1

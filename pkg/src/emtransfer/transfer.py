"""EM learning of a linear map from target space back to source space.

Given a labeled GMM in the source space and labeled target-space data, the
algorithm finds the matrix H that maximizes the likelihood of the mapped
points under the source model. It alternates

* an expectation step: posterior responsibilities of the components for
  every mapped, labeled point, and
* a maximization step minimizing the responsibility-weighted quadratic error
  between mapped points and component means under the component metrics.
  With a shared precision matrix the minimizer is available in closed form
  through ridge-regularized normal equations; with per-component precisions
  it is found by the quasi-Newton solver (the objective is convex either
  way).

Iteration stops when the quadratic error changes by less than epsilon.
H starts as the zero-padded identity, so spaces of unequal dimension are
handled by truncating or zero-extending coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import (
    DegenerateResponsibilityError,
    InvalidInputError,
    NumericalError,
    SingularSystemError,
)
from .lgmm import (
    DEFAULT_POLICY,
    LabeledGMM,
    PrecisionPolicy,
    log_component_density_matrix,
    logsumexp,
)
from .optim import NUMERICAL_FAILURE, SolverConfig, minimize


@dataclass(frozen=True)
class Responsibilities:
    """Column-stochastic (K, N) posterior assignment matrix."""

    gamma: np.ndarray

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float)
        if gamma.ndim != 2:
            raise InvalidInputError(f"gamma must be (K, N), got {gamma.shape}")
        if np.any(gamma < 0) or np.any(gamma > 1):
            raise InvalidInputError("gamma entries must lie in [0, 1]")
        cols = gamma.sum(axis=0)
        if np.any(np.abs(cols - 1.0) > 1e-9):
            raise InvalidInputError("gamma columns must sum to 1")
        gamma.flags.writeable = False
        object.__setattr__(self, "gamma", gamma)


@dataclass(frozen=True)
class TransferMap:
    """A fitted linear transfer together with its fit diagnostics."""

    matrix: np.ndarray
    iterations: int
    converged: bool
    eq_error_trace: tuple
    loglik_trace: tuple

    @property
    def final_eq_error(self) -> float:
        return self.eq_error_trace[-1]


@dataclass(frozen=True)
class TransferConfig:
    """Settings for :func:`em_transfer`.

    ``epsilon`` is relative: iteration stops when the quadratic error moves
    by less than ``epsilon * max(1, initial error)``. ``ridge=None`` selects
    the data-scaled default ``1e-8 * trace(X X^T) / n``; the solver config
    only matters when the precisions differ across components.
    """

    epsilon: float = 1e-5
    max_iterations: int = 200
    ridge: float | None = None
    policy: PrecisionPolicy = DEFAULT_POLICY
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidInputError("epsilon must be positive")
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be at least 1")
        if self.ridge is not None and self.ridge < 0:
            raise InvalidInputError("ridge must be non-negative")


def identity_map(m: int, n: int) -> np.ndarray:
    """The min(m, n)-dimensional identity, zero-padded to (m, n)."""
    out = np.zeros((m, n))
    d = min(m, n)
    out[:d, :d] = np.eye(d)
    return out


def default_ridge(target: Dataset) -> float:
    return 1e-8 * float(np.sum(target.points**2)) / target.dim


def apply_transfer(transfer, points):
    """Map target-space points through H; accepts a map or a bare matrix."""
    H = transfer.matrix if isinstance(transfer, TransferMap) else np.asarray(transfer, dtype=float)
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        return H @ points
    return points @ H.T


def _check_dims(model: LabeledGMM, H: np.ndarray, target: Dataset) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    if H.shape != (model.dim, target.dim):
        raise InvalidInputError(
            f"H must be ({model.dim}, {target.dim}), got {H.shape}"
        )
    if target.num_labels > model.num_labels:
        raise InvalidInputError(
            f"target labels go up to {target.num_labels} but model knows {model.num_labels}"
        )
    return H


def _e_step_with_loglik(model, H, target, policy):
    H = _check_dims(model, H, target)
    mapped = target.points @ H.T
    log_dens = log_component_density_matrix(model, mapped, policy)  # (N, K)
    with np.errstate(divide="ignore"):
        log_label = np.log(model.label_cond[:, target.labels - 1])  # (K, N)
        log_prior = np.log(model.priors)[:, None]
    log_gamma = log_dens.T + log_label + log_prior
    col_norm = logsumexp(log_gamma, axis=0)
    bad = ~np.isfinite(col_norm)
    if np.any(bad):
        raise DegenerateResponsibilityError(int(np.flatnonzero(bad)[0]))
    return np.exp(log_gamma - col_norm), float(col_norm.sum())


def e_step(model: LabeledGMM, H, target: Dataset,
           policy: PrecisionPolicy = DEFAULT_POLICY) -> Responsibilities:
    """Posterior responsibilities of every component for every mapped point."""
    gamma, _ = _e_step_with_loglik(model, H, target, policy)
    return Responsibilities(gamma)


def _gamma_array(resp) -> np.ndarray:
    return resp.gamma if isinstance(resp, Responsibilities) else np.asarray(resp, dtype=float)


def eq_error(model: LabeledGMM, H, target: Dataset, resp, ridge: float = 0.0) -> float:
    """Responsibility-weighted quadratic error of the mapped points.

    With a positive ``ridge`` and a shared precision the regularization term
    ``ridge * trace(Lambda H H^T)`` is included, matching the closed-form
    M-step's objective.
    """
    H = _check_dims(model, H, target)
    gamma = _gamma_array(resp)
    mapped = target.points @ H.T
    total = 0.0
    for k in range(model.num_components):
        diff = mapped - model.means[k]
        quad = np.einsum("ni,ij,nj->n", diff, model.precisions[k], diff)
        total += float(gamma[k] @ quad)
    if ridge > 0.0 and model.shared_precision:
        total += ridge * float(np.trace(model.precisions[0] @ H @ H.T))
    return total


def eq_gradient(model: LabeledGMM, H, target: Dataset, resp, ridge: float = 0.0) -> np.ndarray:
    """Analytic gradient of :func:`eq_error` with respect to H."""
    H = _check_dims(model, H, target)
    gamma = _gamma_array(resp)
    X = target.points  # (N, n)
    grad = np.zeros_like(H)
    for k in range(model.num_components):
        weighted = gamma[k][:, None] * X  # (N, n)
        scatter = X.T @ weighted  # sum_j gamma_kj x_j x_j^T
        first_moment = weighted.sum(axis=0)
        grad += 2.0 * model.precisions[k] @ (
            H @ scatter - np.outer(model.means[k], first_moment)
        )
    if ridge > 0.0 and model.shared_precision:
        grad += 2.0 * ridge * model.precisions[0] @ H
    return grad


def m_step_closed_form(model: LabeledGMM, target: Dataset, resp, ridge: float = 0.0) -> np.ndarray:
    """Global minimizer W Gamma X^T (X X^T + ridge I)^(-1), shared precision only."""
    if not model.shared_precision:
        raise InvalidInputError("closed-form M-step requires a shared precision matrix")
    if ridge < 0:
        raise InvalidInputError("ridge must be non-negative")
    gamma = _gamma_array(resp)
    X = target.points
    n = target.dim
    A = X.T @ X + ridge * np.eye(n)
    if ridge == 0.0 and np.linalg.matrix_rank(A) < n:
        raise SingularSystemError(
            "X X^T is rank-deficient; pass a positive ridge to regularize"
        )
    B = (model.means.T @ gamma) @ X  # (m, n)
    return np.linalg.solve(A, B.T).T


def m_step_gradient(model: LabeledGMM, target: Dataset, resp, h_init,
                    solver: SolverConfig = SolverConfig()) -> np.ndarray:
    """Minimize the quadratic error from ``h_init`` with the quasi-Newton solver."""
    h_init = _check_dims(model, np.asarray(h_init, dtype=float), target)
    gamma = _gamma_array(resp)
    shape = h_init.shape

    def objective(h_flat):
        H = h_flat.reshape(shape)
        return (eq_error(model, H, target, gamma),
                eq_gradient(model, H, target, gamma).ravel())

    result = minimize(objective, h_init.ravel(), solver)
    if result.status == NUMERICAL_FAILURE:
        error = NumericalError("transfer M-step hit a non-finite objective")
        error.best_h = result.x.reshape(shape)
        raise error
    return result.x.reshape(shape)


def em_transfer(model: LabeledGMM, target: Dataset,
                config: TransferConfig = TransferConfig()) -> TransferMap:
    """Fit the transfer matrix by expectation maximization.

    Alternates responsibilities and the appropriate M-step (closed form when
    the model shares one precision, quasi-Newton otherwise, warm-started from
    the previous H) until the quadratic error stabilizes or the iteration
    budget runs out. Records the quadratic-error and log-likelihood traces.
    """
    if model.dim < 1 or target.dim < 1:
        raise InvalidInputError("model and target must have positive dimension")
    H = identity_map(model.dim, target.dim)
    ridge = default_ridge(target) if config.ridge is None else config.ridge
    m_ridge = ridge if model.shared_precision else 0.0

    eq_trace: list[float] = []
    ll_trace: list[float] = []
    previous = np.inf
    threshold = None
    converged = False
    iterations = 0
    for _ in range(config.max_iterations):
        iterations += 1
        gamma, loglik = _e_step_with_loglik(model, H, target, config.policy)
        ll_trace.append(loglik)
        if threshold is None:
            initial = eq_error(model, H, target, gamma, m_ridge)
            threshold = config.epsilon * max(1.0, abs(initial))
        if model.shared_precision:
            H = m_step_closed_form(model, target, gamma, ridge)
        else:
            H = m_step_gradient(model, target, gamma, H, config.solver)
        current = eq_error(model, H, target, gamma, m_ridge)
        eq_trace.append(current)
        if abs(previous - current) < threshold:
            converged = True
            break
        previous = current
    return TransferMap(H, iterations, converged, tuple(eq_trace), tuple(ll_trace))

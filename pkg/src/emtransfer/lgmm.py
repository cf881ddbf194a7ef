"""Labeled Gaussian mixture models.

A labeled GMM attaches a distribution over class labels to every Gaussian
component, so the joint density of a point and its label is

    p(x, y) = sum_k N(x | mu_k, Lambda_k) * P(y | k) * P(k)

with Lambda_k the precision (inverse covariance) of component k. All density
math runs in log space with log-sum-exp; products of many small Gaussians
underflow double precision otherwise.

Degenerate precisions are handled by a :class:`PrecisionPolicy`:

* ``eigen_floor(min_std=s)`` guarantees a standard deviation of at least
  ``s`` in every eigen-direction, i.e. precision eigenvalues are capped at
  ``1/s**2`` (the cap that EM fitting also enforces after every M-step).
* ``pseudo_determinant`` keeps the precision as given and replaces the
  determinant by the product of its non-zero eigenvalues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import (
    DegenerateEvaluationError,
    DegenerateModelError,
    InvalidConfigurationError,
    InvalidInputError,
)

_LOG_2PI = math.log(2.0 * math.pi)
_SYM_TOL = 1e-9
_EIG_TOL = -1e-9


@dataclass(frozen=True)
class PrecisionPolicy:
    """How to evaluate densities when precision matrices degenerate.

    ``mode`` is ``"eigen_floor"`` (default, with ``min_std`` the smallest
    admissible per-direction standard deviation) or ``"pseudo_determinant"``.
    """

    mode: str = "eigen_floor"
    min_std: float = 1e-3

    def __post_init__(self):
        if self.mode not in ("eigen_floor", "pseudo_determinant"):
            raise InvalidInputError(f"unknown precision policy mode {self.mode!r}")
        if self.mode == "eigen_floor" and not self.min_std > 0:
            raise InvalidInputError("min_std must be positive")

    @classmethod
    def eigen_floor(cls, min_std: float = 1e-3) -> "PrecisionPolicy":
        return cls("eigen_floor", min_std)

    @classmethod
    def pseudo_determinant(cls) -> "PrecisionPolicy":
        return cls("pseudo_determinant")


DEFAULT_POLICY = PrecisionPolicy.eigen_floor()


@dataclass(frozen=True)
class LabeledGMM:
    """Generative classifier with per-component label distributions.

    Parameters
    ----------
    means : (K, m) array
        Component means.
    precisions : (K, m, m) array
        Symmetric positive semi-definite precision matrices.
    label_cond : (K, L) array
        Row-stochastic matrix of P(label | component).
    priors : (K,) array
        Component priors, non-negative and summing to one.
    shared_precision : bool
        True asserts that all precision matrices are identical, which
        enables the closed-form transfer M-step.
    """

    means: np.ndarray
    precisions: np.ndarray
    label_cond: np.ndarray
    priors: np.ndarray
    shared_precision: bool = False

    def __post_init__(self):
        means = np.asarray(self.means, dtype=float)
        precisions = np.asarray(self.precisions, dtype=float)
        label_cond = np.asarray(self.label_cond, dtype=float)
        priors = np.asarray(self.priors, dtype=float)
        if means.ndim != 2:
            raise InvalidInputError(f"means must be (K, m), got shape {means.shape}")
        k, m = means.shape
        if precisions.shape != (k, m, m):
            raise InvalidInputError(f"precisions must be ({k}, {m}, {m}), got {precisions.shape}")
        if label_cond.ndim != 2 or label_cond.shape[0] != k:
            raise InvalidInputError(f"label_cond must be ({k}, L), got {label_cond.shape}")
        if priors.shape != (k,):
            raise InvalidInputError(f"priors must be ({k},), got {priors.shape}")
        for arr, name in ((means, "means"), (precisions, "precisions"),
                          (label_cond, "label_cond"), (priors, "priors")):
            if not np.all(np.isfinite(arr)):
                raise InvalidInputError(f"{name} contain non-finite entries")
        if np.any(label_cond < 0):
            raise InvalidInputError("label_cond entries must be non-negative")
        row_sums = label_cond.sum(axis=1)
        if np.any(np.abs(row_sums - 1.0) > _SYM_TOL):
            raise InvalidInputError("label_cond rows must sum to 1")
        if np.any(priors < 0) or abs(priors.sum() - 1.0) > _SYM_TOL:
            raise InvalidInputError("priors must be non-negative and sum to 1")
        if np.max(np.abs(precisions - np.transpose(precisions, (0, 2, 1)))) > _SYM_TOL:
            raise InvalidInputError("precision matrices must be symmetric")
        sym = 0.5 * (precisions + np.transpose(precisions, (0, 2, 1)))
        eigvals = np.linalg.eigvalsh(sym)
        if eigvals.min() < _EIG_TOL:
            raise InvalidInputError(
                f"precision matrices must be positive semi-definite "
                f"(smallest eigenvalue {eigvals.min():.3e})"
            )
        if self.shared_precision and k > 1 and not np.array_equal(
            precisions, np.broadcast_to(precisions[0], precisions.shape)
        ):
            raise InvalidInputError("shared_precision=True requires identical precision matrices")
        for arr in (means, precisions, label_cond, priors):
            arr.flags.writeable = False
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "precisions", precisions)
        object.__setattr__(self, "label_cond", label_cond)
        object.__setattr__(self, "priors", priors)

    @property
    def num_components(self) -> int:
        return self.means.shape[0]

    @property
    def num_labels(self) -> int:
        return self.label_cond.shape[1]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def effective_precision_eigh(model: LabeledGMM, policy: PrecisionPolicy = DEFAULT_POLICY):
    """Eigendecomposition of every precision matrix after applying ``policy``.

    Returns ``(eigvals, eigvecs, log_dets)`` where ``eigvals`` is (K, m) with
    the policy applied, ``eigvecs`` is (K, m, m) with eigenvectors in columns
    and ``log_dets`` holds the (pseudo-)log-determinants. Under
    ``eigen_floor`` a singular precision keeps its zero eigenvalues, which
    makes the component's density vanish everywhere; under
    ``pseudo_determinant`` the zero eigenvalues are simply excluded from the
    determinant.
    """
    sym = 0.5 * (model.precisions + np.transpose(model.precisions, (0, 2, 1)))
    eigvals, eigvecs = np.linalg.eigh(sym)
    eigvals = np.clip(eigvals, 0.0, None)
    if policy.mode == "eigen_floor":
        cap = 1.0 / policy.min_std**2
        eigvals = np.minimum(eigvals, cap)
        with np.errstate(divide="ignore"):
            log_dets = np.where(eigvals > 0.0, np.log(np.where(eigvals > 0.0, eigvals, 1.0)),
                                -np.inf).sum(axis=1)
    else:
        max_eig = eigvals.max(axis=1)
        if np.any(max_eig <= 0.0):
            raise DegenerateModelError("a precision matrix has no positive eigenvalues")
        keep = eigvals >= (1e-12 * max_eig)[:, None]
        if not np.all(keep.any(axis=1)):
            raise DegenerateModelError("a precision matrix has no eigenvalue above threshold")
        log_dets = np.where(keep, np.log(np.where(keep, eigvals, 1.0)), 0.0).sum(axis=1)
    return eigvals, eigvecs, log_dets


def logsumexp(values: np.ndarray, axis=None):
    """log(sum(exp(values))) that tolerates -inf entries."""
    values = np.asarray(values, dtype=float)
    peak = np.max(values, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(values - peak), axis=axis, keepdims=True)) + peak
    if axis is None:
        return float(out)
    return np.squeeze(out, axis=axis)


def log_component_density_matrix(model: LabeledGMM, points: np.ndarray,
                                 policy: PrecisionPolicy = DEFAULT_POLICY) -> np.ndarray:
    """(N, K) matrix of log N(x_j | mu_k, Lambda_k) under ``policy``."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] != model.dim:
        raise InvalidInputError(f"points must be (N, {model.dim}), got shape {points.shape}")
    if not np.all(np.isfinite(points)):
        raise InvalidInputError("points contain non-finite entries")
    eigvals, eigvecs, log_dets = effective_precision_eigh(model, policy)
    m = model.dim
    out = np.empty((points.shape[0], model.num_components))
    for k in range(model.num_components):
        proj = (points - model.means[k]) @ eigvecs[k]
        quad = (proj * proj) @ eigvals[k]
        out[:, k] = 0.5 * (log_dets[k] - m * _LOG_2PI) - 0.5 * quad
    return out


def log_component_density(model: LabeledGMM, k: int, x, policy: PrecisionPolicy = DEFAULT_POLICY) -> float:
    """log N(x | mu_k, Lambda_k) under the degeneracy policy."""
    if not 0 <= k < model.num_components:
        raise InvalidInputError(f"component index {k} out of range [0, {model.num_components})")
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return float(log_component_density_matrix(model, x, policy)[0, k])


def _check_label(model: LabeledGMM, y: int) -> int:
    y = int(y)
    if not 1 <= y <= model.num_labels:
        raise InvalidInputError(f"label {y} out of range [1, {model.num_labels}]")
    return y


def _log_joint_matrix(model: LabeledGMM, points: np.ndarray, labels: np.ndarray,
                      policy: PrecisionPolicy) -> np.ndarray:
    """(N, K) matrix of log[N(x_j|k) * P(y_j|k) * P(k)]."""
    log_dens = log_component_density_matrix(model, points, policy)
    with np.errstate(divide="ignore"):
        log_label = np.log(model.label_cond[:, labels - 1].T)
        log_prior = np.log(model.priors)
    return log_dens + log_label + log_prior


def joint_density(model: LabeledGMM, x, y: int, policy: PrecisionPolicy = DEFAULT_POLICY) -> float:
    """p(x, y) = sum_k N(x|mu_k,Lambda_k) P(y|k) P(k), via log-sum-exp."""
    y = _check_label(model, y)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    log_terms = _log_joint_matrix(model, x, np.array([y]), policy)
    return float(np.exp(logsumexp(log_terms, axis=1)[0]))


def _log_posterior_matrix(model: LabeledGMM, points: np.ndarray,
                          policy: PrecisionPolicy) -> np.ndarray:
    """(N, L) unnormalized log p(x, y) for every label."""
    log_dens = log_component_density_matrix(model, points, policy)
    with np.errstate(divide="ignore"):
        log_mix = log_dens + np.log(model.priors)
        log_label = np.log(model.label_cond)
    # (N, K) + (K, L) combined per label through log-sum-exp over components.
    out = np.empty((points.shape[0], model.num_labels))
    for y in range(model.num_labels):
        out[:, y] = logsumexp(log_mix + log_label[:, y], axis=1)
    return out


def posterior_labels(model: LabeledGMM, x, policy: PrecisionPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Posterior P(y | x) as an L-vector summing to one."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    log_joint = _log_posterior_matrix(model, x, policy)[0]
    norm = logsumexp(log_joint, axis=0)
    if not np.isfinite(norm):
        raise DegenerateEvaluationError(
            "every component assigns zero density to the query point"
        )
    return np.exp(log_joint - norm)


def classify(model: LabeledGMM, x, policy: PrecisionPolicy = DEFAULT_POLICY) -> int:
    """Label with maximal posterior; ties break toward the smallest label."""
    return int(np.argmax(posterior_labels(model, x, policy))) + 1


def classify_batch(model: LabeledGMM, points: np.ndarray,
                   policy: PrecisionPolicy = DEFAULT_POLICY) -> np.ndarray:
    """Vectorized :func:`classify` over the rows of ``points``."""
    points = np.asarray(points, dtype=float)
    log_joint = _log_posterior_matrix(model, points, policy)
    norms = logsumexp(log_joint, axis=1)
    if not np.all(np.isfinite(norms)):
        bad = int(np.flatnonzero(~np.isfinite(norms))[0])
        raise DegenerateEvaluationError(
            f"every component assigns zero density to point {bad}"
        )
    return np.argmax(log_joint, axis=1) + 1


def log_likelihood(model: LabeledGMM, data: Dataset,
                   policy: PrecisionPolicy = DEFAULT_POLICY) -> float:
    """Sum of log p(x_j, y_j); returns -inf when any point has zero density."""
    if data.num_labels > model.num_labels:
        raise InvalidInputError(
            f"data labels go up to {data.num_labels} but model knows {model.num_labels}"
        )
    log_terms = _log_joint_matrix(model, data.points, data.labels, policy)
    per_point = logsumexp(log_terms, axis=1)
    if np.any(np.isneginf(per_point)):
        return float("-inf")
    return float(per_point.sum())


def _floored_precision_from_cov(cov: np.ndarray, min_std: float) -> np.ndarray:
    """Invert a covariance with eigenvalues floored at min_std**2."""
    sym = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(sym)
    eigvals = np.maximum(eigvals, min_std**2)
    return (eigvecs / eigvals) @ eigvecs.T


def fit_lgmm(data: Dataset, k_per_label: int, shared_precision: bool,
             policy: PrecisionPolicy = DEFAULT_POLICY, seed: int = 0,
             restarts: int = 1, tol: float = 1e-6, max_iter: int = 500,
             loglik_trace: list | None = None) -> LabeledGMM:
    """Fit a labeled GMM with crisp labels by expectation maximization.

    Each present label gets ``k_per_label`` components that emit only that
    label. Components start at a seeded random subset of same-label points;
    iteration stops when the absolute log-likelihood change drops below
    ``tol`` or after ``max_iter`` iterations. The best of ``restarts``
    seeded runs (by training log-likelihood) is returned. Covariance
    eigenvalues are floored at ``min_std**2`` in every M-step, mirroring the
    evaluation-time precision cap.

    When ``loglik_trace`` is a list, the per-iteration log-likelihoods of the
    winning run are appended to it.
    """
    if k_per_label < 1:
        raise InvalidConfigurationError("k_per_label must be at least 1")
    if restarts < 1:
        raise InvalidConfigurationError("restarts must be at least 1")
    present = data.present_labels()
    counts = {int(l): int(np.sum(data.labels == l)) for l in present}
    for label, count in counts.items():
        if count < k_per_label:
            raise InvalidConfigurationError(
                f"label {label} has {count} points, fewer than k_per_label={k_per_label}"
            )
    min_std = policy.min_std if policy.mode == "eigen_floor" else DEFAULT_POLICY.min_std

    best = None
    seeds = np.random.SeedSequence(seed).spawn(restarts)
    for child in seeds:
        model, trace = _fit_single(data, k_per_label, shared_precision, min_std,
                                   np.random.default_rng(child), tol, max_iter)
        if best is None or trace[-1] > best[1][-1]:
            best = (model, trace)
    model, trace = best
    if loglik_trace is not None:
        loglik_trace.extend(trace)
    return model


def _fit_single(data: Dataset, k_per_label: int, shared_precision: bool,
                min_std: float, rng: np.random.Generator,
                tol: float, max_iter: int):
    X = data.points
    n, m = X.shape
    present = data.present_labels()
    num_labels = data.num_labels

    comp_labels = np.repeat(present, k_per_label)
    K = comp_labels.size
    label_cond = np.zeros((K, num_labels))
    label_cond[np.arange(K), comp_labels - 1] = 1.0

    means = np.empty((K, m))
    priors = np.empty(K)
    pooled = np.zeros((m, m))
    per_label_cov = {}
    for label in present:
        mask = data.labels == label
        pts = X[mask]
        centered = pts - pts.mean(axis=0)
        cov = centered.T @ centered / max(len(pts), 1)
        per_label_cov[int(label)] = cov
        pooled += centered.T @ centered
    pooled /= n
    idx = 0
    for label in present:
        mask = np.flatnonzero(data.labels == label)
        chosen = rng.choice(mask, size=k_per_label, replace=False)
        means[idx:idx + k_per_label] = X[chosen]
        priors[idx:idx + k_per_label] = mask.size / n / k_per_label
        idx += k_per_label

    if shared_precision:
        precisions = np.broadcast_to(_floored_precision_from_cov(pooled, min_std), (K, m, m)).copy()
    else:
        precisions = np.stack([
            _floored_precision_from_cov(per_label_cov[int(l)], min_std) for l in comp_labels
        ])

    with np.errstate(divide="ignore"):
        log_label_by_point = np.log(label_cond[:, data.labels - 1])  # (K, N)

    trace = []
    prev_ll = -np.inf
    eps_guard = 10.0 * np.finfo(float).eps
    for _ in range(max_iter):
        model = LabeledGMM(means, precisions, label_cond, priors / priors.sum(),
                           shared_precision=shared_precision)
        log_dens = log_component_density_matrix(model, X, PrecisionPolicy.eigen_floor(min_std))
        with np.errstate(divide="ignore"):
            log_resp = log_dens.T + log_label_by_point + np.log(model.priors)[:, None]
        col_norm = logsumexp(log_resp, axis=0)
        ll = float(col_norm.sum())
        trace.append(ll)
        resp = np.exp(log_resp - col_norm)  # (K, N)

        nk = resp.sum(axis=1) + eps_guard
        priors = nk / nk.sum()
        means = (resp @ X) / nk[:, None]
        if shared_precision:
            scatter = np.zeros((m, m))
            for k in range(K):
                diff = X - means[k]
                scatter += (resp[k][:, None] * diff).T @ diff
            precision = _floored_precision_from_cov(scatter / n, min_std)
            precisions = np.broadcast_to(precision, (K, m, m)).copy()
        else:
            precisions = np.empty((K, m, m))
            for k in range(K):
                diff = X - means[k]
                cov = (resp[k][:, None] * diff).T @ diff / nk[k]
                precisions[k] = _floored_precision_from_cov(cov, min_std)

        if abs(ll - prev_ll) < tol:
            break
        prev_ll = ll

    model = LabeledGMM(means, precisions, label_cond, priors / priors.sum(),
                       shared_precision=shared_precision)
    return model, trace

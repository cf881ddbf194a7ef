"""Learning vector quantization with adaptive metrics.

GMLVQ learns prototypes plus one shared metric matrix Omega; LGMLVQ learns
one Omega per prototype; GLVQ is the special case Omega = identity. Training
is stochastic gradient descent on the relative-distance cost

    sum_i Phi((d+ - d-) / (d+ + d-))

where d+ / d- are the squared metric distances to the closest prototype with
the same / a different label and Phi is a logistic sigmoid. A trained model
converts into a labeled Gaussian mixture by placing a Gaussian with precision
Omega_k^T Omega_k / sigma^2 on every prototype; for small sigma the mixture's
posterior classification agrees with the nearest-prototype rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .dataset import Dataset
from .errors import InvalidConfigurationError, InvalidInputError
from .lgmm import LabeledGMM


@dataclass(frozen=True)
class LvqModel:
    """Prototypes with labels and their metric matrices.

    ``omegas`` is a single (m, m) matrix when ``shared_omega`` is true and a
    (K, m, m) stack otherwise.
    """

    prototypes: np.ndarray
    prototype_labels: np.ndarray
    omegas: np.ndarray
    shared_omega: bool = True

    def __post_init__(self):
        prototypes = np.asarray(self.prototypes, dtype=float)
        labels = np.asarray(self.prototype_labels, dtype=int)
        omegas = np.asarray(self.omegas, dtype=float)
        if prototypes.ndim != 2:
            raise InvalidInputError(f"prototypes must be (K, m), got {prototypes.shape}")
        k, m = prototypes.shape
        if labels.shape != (k,):
            raise InvalidInputError(f"prototype_labels must be ({k},), got {labels.shape}")
        if labels.min() < 1:
            raise InvalidInputError("prototype labels must be 1-based positive integers")
        missing = set(range(1, int(labels.max()) + 1)) - set(labels.tolist())
        if missing:
            raise InvalidInputError(f"labels {sorted(missing)} have no prototype")
        expected = (m, m) if self.shared_omega else (k, m, m)
        if omegas.shape != expected:
            raise InvalidInputError(f"omegas must have shape {expected}, got {omegas.shape}")
        if not (np.all(np.isfinite(prototypes)) and np.all(np.isfinite(omegas))):
            raise InvalidInputError("prototypes and omegas must be finite")
        for arr in (prototypes, labels, omegas):
            arr.flags.writeable = False
        object.__setattr__(self, "prototypes", prototypes)
        object.__setattr__(self, "prototype_labels", labels)
        object.__setattr__(self, "omegas", omegas)

    @property
    def num_prototypes(self) -> int:
        return self.prototypes.shape[0]

    @property
    def num_labels(self) -> int:
        return int(self.prototype_labels.max())

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    def omega_for(self, k: int) -> np.ndarray:
        return self.omegas if self.shared_omega else self.omegas[k]


@dataclass(frozen=True)
class LvqTrainingConfig:
    """SGD hyperparameters; the sigmoid is logistic with slope ``beta``.

    Both learning rates decay harmonically over epochs,
    ``rate / (1 + learning_rate_decay * epoch)``; without decay the
    per-prototype metrics drift late in training instead of settling.
    """

    prototypes_per_class: int = 1
    epochs: int = 100
    learning_rate_prototypes: float = 0.01
    learning_rate_omega: float = 0.001
    learning_rate_decay: float = 0.1
    beta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.prototypes_per_class < 1:
            raise InvalidInputError("prototypes_per_class must be at least 1")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be at least 1")
        if not (self.learning_rate_prototypes > 0 and self.learning_rate_omega > 0):
            raise InvalidInputError("learning rates must be positive")
        if self.learning_rate_decay < 0:
            raise InvalidInputError("learning_rate_decay must be non-negative")
        if not self.beta > 0:
            raise InvalidInputError("beta must be positive")


def logistic(u, beta: float = 1.0):
    return 1.0 / (1.0 + np.exp(-np.clip(beta * np.asarray(u, dtype=float), -500, 500)))


def lvq_distance(model: LvqModel, k: int, x) -> float:
    """Squared metric distance (mu_k - x)^T Omega_k^T Omega_k (mu_k - x)."""
    if not 0 <= k < model.num_prototypes:
        raise InvalidInputError(f"prototype index {k} out of range")
    x = np.asarray(x, dtype=float)
    diff = model.prototypes[k] - x
    z = model.omega_for(k) @ diff
    return float(z @ z)


def squared_distances(model: LvqModel, points) -> np.ndarray:
    """(N, K) matrix of squared metric distances."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[None, :]
    out = np.empty((points.shape[0], model.num_prototypes))
    for k in range(model.num_prototypes):
        z = (points - model.prototypes[k]) @ model.omega_for(k).T
        out[:, k] = np.einsum("ij,ij->i", z, z)
    return out


def lvq_classify(model: LvqModel, x) -> int:
    """Label of the closest prototype; ties go to the smallest index."""
    d = squared_distances(model, x)[0]
    return int(model.prototype_labels[int(np.argmin(d))])


def lvq_classify_batch(model: LvqModel, points) -> np.ndarray:
    d = squared_distances(model, points)
    return model.prototype_labels[np.argmin(d, axis=1)]


def _winner_masks(model: LvqModel, labels: np.ndarray):
    same = model.prototype_labels[None, :] == labels[:, None]
    if np.any(~same.any(axis=1)) or np.any(same.all(axis=1)):
        raise InvalidConfigurationError(
            "every data label needs a same-label and a different-label prototype"
        )
    return same


def glvq_scores(model: LvqModel, data: Dataset) -> np.ndarray:
    """Per-sample relative distances (d+ - d-) / (d+ + d-) in [-1, 1]."""
    d = squared_distances(model, data.points)
    same = _winner_masks(model, data.labels)
    d_plus = np.where(same, d, np.inf).min(axis=1)
    d_minus = np.where(same, np.inf, d).min(axis=1)
    denom = d_plus + d_minus
    safe = denom > 0
    return np.where(safe, (d_plus - d_minus) / np.where(safe, denom, 1.0), 0.0)


def glvq_cost(model: LvqModel, data: Dataset, phi=None) -> float:
    """Sum of Phi(score) over the data; Phi defaults to logistic slope 1."""
    if phi is None:
        phi = logistic
    return float(np.sum(phi(glvq_scores(model, data))))


def initial_lvq_model(data: Dataset, config: LvqTrainingConfig, shared_omega: bool) -> LvqModel:
    """Prototypes at per-class means plus seeded jitter, identity metric."""
    present = data.present_labels()
    if present.size != data.num_labels or present[0] != 1:
        missing = sorted(set(range(1, data.num_labels + 1)) - set(present.tolist()))
        raise InvalidConfigurationError(f"classes {missing} have no data")
    if present.size < 2:
        raise InvalidConfigurationError("training needs at least two classes")
    rng = np.random.default_rng(config.seed)
    scale = 0.01 * data.points.std(axis=0)
    prototypes = []
    labels = []
    for label in present:
        mean = data.points[data.labels == label].mean(axis=0)
        for _ in range(config.prototypes_per_class):
            prototypes.append(mean + scale * rng.standard_normal(data.dim))
            labels.append(int(label))
    m = data.dim
    omegas = np.eye(m) if shared_omega else np.stack([np.eye(m)] * len(prototypes))
    return LvqModel(np.array(prototypes), np.array(labels), omegas, shared_omega)


def _normalized(omega: np.ndarray, m: int) -> np.ndarray:
    return omega * math.sqrt(m / float(np.einsum("ij,ij->", omega, omega)))


@njit(cache=True)
def _winners(d, same, K):
    p = -1
    q = -1
    dp = np.inf
    dq = np.inf
    for k in range(K):
        if same[k]:
            if d[k] < dp:
                dp = d[k]
                p = k
        elif d[k] < dq:
            dq = d[k]
            q = k
    return p, q, dp, dq


@njit(cache=True)
def _local_metric_step(omegas, idx, g, weight, z, diff, lr_o, m):
    ss = 0.0
    for a in range(m):
        for b in range(m):
            omegas[idx, a, b] -= lr_o * weight * 2.0 * g * z[idx, a] * diff[idx, b]
            ss += omegas[idx, a, b] * omegas[idx, a, b]
    scale = math.sqrt(m / ss)
    for a in range(m):
        for b in range(m):
            omegas[idx, a, b] *= scale


@njit(cache=True)
def _sgd_epochs(X, same_label, perms, protos, omegas, shared,
                lr_p0, lr_o0, decay, beta):
    epochs, n = perms.shape
    K, m = protos.shape
    z = np.empty((K, m))
    d = np.empty(K)
    diff = np.empty((K, m))
    for epoch in range(epochs):
        damp = 1.0 / (1.0 + decay * epoch)
        lr_p = lr_p0 * damp
        lr_o = lr_o0 * damp
        for t in range(n):
            j = perms[epoch, t]
            for k in range(K):
                ok = 0 if shared else k
                dk = 0.0
                for a in range(m):
                    diff[k, a] = protos[k, a] - X[j, a]
                for a in range(m):
                    acc = 0.0
                    for b in range(m):
                        acc += omegas[ok, a, b] * diff[k, b]
                    z[k, a] = acc
                    dk += acc * acc
                d[k] = dk
            p, q, dp, dq = _winners(d, same_label[j], K)
            denom = dp + dq
            if denom <= 0.0:
                continue
            u = (dp - dq) / denom
            phi_u = 1.0 / (1.0 + math.exp(-beta * u))
            weight = beta * phi_u * (1.0 - phi_u)
            gp = 2.0 * dq / (denom * denom)
            gq = -2.0 * dp / (denom * denom)
            op = 0 if shared else p
            oq = 0 if shared else q
            # Prototype steps along Omega^T Omega (mu - x), before Omega moves.
            for a in range(m):
                accp = 0.0
                accq = 0.0
                for b in range(m):
                    accp += omegas[op, b, a] * z[p, b]
                    accq += omegas[oq, b, a] * z[q, b]
                protos[p, a] -= lr_p * weight * gp * 2.0 * accp
                protos[q, a] -= lr_p * weight * gq * 2.0 * accq
            if shared:
                ss = 0.0
                for a in range(m):
                    for b in range(m):
                        omegas[0, a, b] -= lr_o * weight * 2.0 * (
                            gp * z[p, a] * diff[p, b] + gq * z[q, a] * diff[q, b]
                        )
                        ss += omegas[0, a, b] * omegas[0, a, b]
                scale = math.sqrt(m / ss)
                for a in range(m):
                    for b in range(m):
                        omegas[0, a, b] *= scale
            else:
                _local_metric_step(omegas, p, gp, weight, z, diff, lr_o, m)
                _local_metric_step(omegas, q, gq, weight, z, diff, lr_o, m)


def _train(data: Dataset, config: LvqTrainingConfig, shared_omega: bool) -> LvqModel:
    init = initial_lvq_model(data, config, shared_omega)
    protos = init.prototypes.copy()
    proto_labels = init.prototype_labels
    m = data.dim
    K = protos.shape[0]
    omegas = np.stack([np.eye(m)] * (1 if shared_omega else K))

    same_label = proto_labels[None, :] == data.labels[:, None]  # (N, K)

    # Separate stream from the init jitter so both stay reproducible.
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(1)[0])
    perms = np.stack([rng.permutation(data.num_points) for _ in range(config.epochs)])

    _sgd_epochs(data.points, same_label, perms, protos, omegas, shared_omega,
                config.learning_rate_prototypes, config.learning_rate_omega,
                config.learning_rate_decay, config.beta)

    final = _normalized(omegas[0], m) if shared_omega else np.stack(
        [_normalized(omegas[k], m) for k in range(K)]
    )
    return LvqModel(protos, proto_labels, final, shared_omega)


def train_gmlvq(data: Dataset, config: LvqTrainingConfig = LvqTrainingConfig()) -> LvqModel:
    """GMLVQ: stochastic gradient descent with one shared metric matrix."""
    return _train(data, config, shared_omega=True)


def train_lgmlvq(data: Dataset, config: LvqTrainingConfig = LvqTrainingConfig()) -> LvqModel:
    """LGMLVQ: one metric matrix per prototype."""
    return _train(data, config, shared_omega=False)


def default_sigma(model: LvqModel) -> float:
    """0.05 times the median pairwise Euclidean prototype distance."""
    K = model.num_prototypes
    if K < 2:
        raise InvalidInputError("default sigma needs at least two prototypes; pass sigma explicitly")
    dists = [
        float(np.linalg.norm(model.prototypes[i] - model.prototypes[j]))
        for i in range(K) for j in range(i + 1, K)
    ]
    return 0.05 * float(np.median(dists))


def to_lgmm(model: LvqModel, sigma: float | None = None) -> LabeledGMM:
    """Convert to a labeled GMM: Gaussians on the prototypes.

    Precisions are ``Omega_k^T Omega_k / sigma**2`` (symmetric PSD by
    construction), each component emits only its prototype's label, and the
    priors are uniform.
    """
    if sigma is None:
        sigma = default_sigma(model)
    if not sigma > 0:
        raise InvalidInputError("sigma must be positive")
    K = model.num_prototypes
    num_labels = model.num_labels
    precisions = np.empty((K, model.dim, model.dim))
    for k in range(K):
        om = model.omega_for(k)
        precisions[k] = om.T @ om / sigma**2
    label_cond = np.zeros((K, num_labels))
    label_cond[np.arange(K), model.prototype_labels - 1] = 1.0
    priors = np.full(K, 1.0 / K)
    return LabeledGMM(model.prototypes, precisions, label_cond, priors,
                      shared_precision=model.shared_omega)

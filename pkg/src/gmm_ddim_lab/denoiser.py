"""Closed-form noise predictors for mixture and point-cloud data.

For data ``q(x_0) = sum_i w_i N(mu_i, S_i)`` the noisy marginal at step t is
again a mixture, so ``E[x_0 | x_t]`` and hence the optimal noise prediction
are available exactly. Point clouds are the ``S_i = 0`` case.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np
from scipy.special import logsumexp, softmax

from .data import MixtureDistribution, PointCloud
from .errors import ParameterError, SingularStepError
from .schedule import Schedule

__all__ = [
    "EpsilonEstimator",
    "GuidanceConfig",
    "ExactDenoiser",
    "GuidedDenoiser",
    "exact_epsilon",
    "posterior_mean",
    "class_posterior",
    "classifier_log_prob_grad",
    "guided_epsilon",
]

_JITTER = 1e-12
GUIDANCE_MODES = ("none", "classifier", "classifier_free")


class EpsilonEstimator(Protocol):
    def __call__(self, x_t: np.ndarray, t: int, label=None) -> np.ndarray: ...


@dataclass(frozen=True)
class GuidanceConfig:
    mode: str = "none"
    scale: float = 0.0
    target_label: object = None

    def __post_init__(self):
        if self.mode not in GUIDANCE_MODES:
            raise ParameterError(f"guidance mode must be one of {GUIDANCE_MODES}, got {self.mode!r}")
        if self.scale < 0:
            raise ParameterError("guidance scale must be nonnegative")
        if self.mode != "none" and self.target_label is None:
            raise ParameterError("guidance needs a target_label")


def _components(dist):
    if isinstance(dist, PointCloud):
        D = dist.dim
        return dist.weights, dist.points, np.zeros((dist.points.shape[0], D, D)), None
    if isinstance(dist, MixtureDistribution):
        return dist.weights, dist.means, dist.covariances, dist.labels
    raise ParameterError(f"unsupported distribution type {type(dist).__name__}")


def _alpha(schedule: Schedule, t: int) -> float:
    if int(t) != t or not 1 <= t <= schedule.total_steps:
        raise ParameterError(f"t={t} outside [1, {schedule.total_steps}]")
    a = schedule.alpha(t)
    if a >= 1.0:
        raise SingularStepError(f"alpha({t}) == 1; noise prediction undefined")
    return a


def _chol(C):
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        return np.linalg.cholesky(C + _JITTER * np.eye(C.shape[-1]))


def _noisy_terms(dist, a, x):
    """Per-component quantities of the noisy mixture at ``x``.

    Returns ``(log_joint, precision_resid, post_means)`` with shapes
    ``(N, M)``, ``(N, M, D)``, ``(N, M, D)``: log of weight times component
    density, ``C_i^{-1} (x - sqrt(a) mu_i)``, and ``E[x_0 | x_t, i]``.
    """
    w, mu, S, _ = _components(dist)
    D = mu.shape[1]
    if x.shape[-1] != D:
        raise ParameterError(f"expected points of dimension {D}, got {x.shape[-1]}")
    C = a * S + (1.0 - a) * np.eye(D)
    L = _chol(C)
    L_inv = np.linalg.inv(L)
    # (M, N, D) layout so every product is one batched matmul per component
    resid = x[None, :, :] - np.sqrt(a) * mu[:, None, :]
    z = resid @ L_inv.transpose(0, 2, 1)
    prec_resid = z @ L_inv
    logdet = np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    log_joint = np.log(w) - 0.5 * np.sum(z * z, axis=-1).T - logdet - 0.5 * D * np.log(2 * np.pi)
    post = mu[None] + np.sqrt(a) * (prec_resid @ S).transpose(1, 0, 2)
    return log_joint, prec_resid.transpose(1, 0, 2), post


def posterior_mean(dist, schedule: Schedule, x_t, t: int) -> np.ndarray:
    """``E[x_0 | x_t]`` under the data distribution."""
    a = _alpha(schedule, t)
    x = np.asarray(x_t, dtype=float)
    xb = np.atleast_2d(x)
    log_joint, _, post = _noisy_terms(dist, a, xb)
    r = softmax(log_joint, axis=1)
    out = np.einsum("nm,nmi->ni", r, post)
    return out[0] if x.ndim == 1 else out


def exact_epsilon(dist, schedule: Schedule, x_t, t: int) -> np.ndarray:
    """Optimal noise prediction ``(x_t - sqrt(a) E[x_0|x_t]) / sqrt(1 - a)``.

    Accepts a single point ``(D,)`` or a batch ``(N, D)``.
    """
    a = _alpha(schedule, t)
    x = np.asarray(x_t, dtype=float)
    x0 = posterior_mean(dist, schedule, x, t)
    return (x - np.sqrt(a) * x0) / np.sqrt(1.0 - a)


def class_posterior(dist: MixtureDistribution, schedule: Schedule, x_t, t: int) -> np.ndarray:
    """Exact ``p(y | x_t)``; columns follow ``dist.classes``."""
    a = _alpha(schedule, t)
    classes = dist.classes
    xb = np.atleast_2d(np.asarray(x_t, dtype=float))
    log_joint, _, _ = _noisy_terms(dist, a, xb)
    onehot = dist.labels[:, None] == classes[None, :]
    # log-sum-exp within each class
    masked = np.where(onehot[None], log_joint[:, :, None], -np.inf)
    log_py = logsumexp(masked, axis=1)
    return softmax(log_py, axis=1)


def classifier_log_prob_grad(dist: MixtureDistribution, schedule: Schedule, x_t, t: int, label) -> np.ndarray:
    """Gradient in ``x_t`` of ``log p(label | x_t)`` for the exact classifier."""
    a = _alpha(schedule, t)
    if dist.labels is None:
        raise ParameterError("classifier guidance needs a labelled distribution")
    in_class = dist.labels == label
    if not np.any(in_class):
        raise ParameterError(f"unknown label {label!r}")
    x = np.asarray(x_t, dtype=float)
    xb = np.atleast_2d(x)
    log_joint, prec_resid, _ = _noisy_terms(dist, a, xb)
    r_all = softmax(log_joint, axis=1)
    r_cls = softmax(np.where(in_class[None], log_joint, -np.inf), axis=1)
    # component score is -C_i^{-1}(x - sqrt(a) mu_i)
    grad = -np.einsum("nm,nmi->ni", r_cls - r_all, prec_resid)
    return grad[0] if x.ndim == 1 else grad


def guided_epsilon(base: EpsilonEstimator, dist: MixtureDistribution, schedule: Schedule, x_t, t: int, cfg: GuidanceConfig) -> np.ndarray:
    if cfg.mode == "none":
        return base(x_t, t)
    if dist.labels is None:
        raise ParameterError("guidance needs a labelled distribution")
    if cfg.target_label not in set(dist.classes.tolist()):
        raise ParameterError(f"unknown label {cfg.target_label!r}")
    eps = base(x_t, t)
    if cfg.mode == "classifier":
        a = _alpha(schedule, t)
        grad = classifier_log_prob_grad(dist, schedule, x_t, t, cfg.target_label)
        return eps - cfg.scale * np.sqrt(1.0 - a) * grad
    eps_cond = exact_epsilon(dist.restrict(cfg.target_label), schedule, x_t, t)
    return eps + cfg.scale * (eps_cond - eps)


class ExactDenoiser:
    """Callable noise predictor backed by :func:`exact_epsilon`.

    Passing ``label`` conditions on the class-restricted sub-mixture.
    """

    def __init__(self, dist, schedule: Schedule):
        self.dist = dist
        self.schedule = schedule

    @property
    def dim(self) -> int:
        return self.dist.dim

    def __call__(self, x_t, t, label=None):
        dist = self.dist if label is None else self.dist.restrict(label)
        return exact_epsilon(dist, self.schedule, x_t, t)


class GuidedDenoiser:
    def __init__(self, base: EpsilonEstimator, dist: MixtureDistribution, schedule: Schedule, cfg: GuidanceConfig):
        if cfg.mode != "none" and cfg.target_label not in set(dist.classes.tolist()):
            raise ParameterError(f"unknown label {cfg.target_label!r}")
        self.base = base
        self.dist = dist
        self.schedule = schedule
        self.cfg = cfg

    @property
    def dim(self) -> int:
        return self.dist.dim

    def __call__(self, x_t, t, label=None):
        return guided_epsilon(self.base, self.dist, self.schedule, x_t, t, self.cfg)

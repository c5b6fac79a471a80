"""Two-sample and distributional quality metrics.

Covariances use population (1/n) normalisation throughout.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import ParameterError

__all__ = [
    "MetricsReport",
    "median_bandwidth",
    "mmd_squared",
    "sliced_wasserstein2",
    "wasserstein2_1d",
    "moment_errors",
    "evaluate",
]

_MEDIAN_SUBSAMPLE = 2000
_CHUNK = 2048


def _batch(X, name):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ParameterError(f"{name} must be a 2-d batch")
    return X


def median_bandwidth(X, Y) -> float:
    """Median pairwise distance of the pooled set.

    Pools larger than 2000 points use an evenly strided subsample so the
    heuristic stays O(1) in memory; the result is still deterministic.
    """
    Z = np.concatenate([X, Y])
    if len(Z) > _MEDIAN_SUBSAMPLE:
        Z = Z[np.linspace(0, len(Z) - 1, _MEDIAN_SUBSAMPLE).astype(int)]
    return float(np.median(pdist(Z)))


def _kernel_sum(A, B, gamma, skip_diag=False):
    total = 0.0
    for i in range(0, len(A), _CHUNK):
        K = np.exp(-gamma * cdist(A[i : i + _CHUNK], B, "sqeuclidean"))
        total += K.sum()
    if skip_diag:
        total -= len(A)
    return total


def mmd_squared(X, Y, bandwidth="median") -> float:
    """Unbiased MMD^2 with the kernel ``exp(-|x - y|^2 / (2 h^2))``."""
    X, Y = _batch(X, "X"), _batch(Y, "Y")
    m, n = len(X), len(Y)
    if m < 2 or n < 2:
        raise ParameterError("mmd_squared needs at least 2 points per batch")
    if X.shape[1] != Y.shape[1]:
        raise ParameterError("batches differ in dimension")
    h = median_bandwidth(X, Y) if bandwidth == "median" else float(bandwidth)
    if not h > 0:
        raise ParameterError(f"bandwidth must be positive, got {h!r}")
    gamma = 0.5 / h**2
    kxx = _kernel_sum(X, X, gamma, skip_diag=True) / (m * (m - 1))
    kyy = _kernel_sum(Y, Y, gamma, skip_diag=True) / (n * (n - 1))
    kxy = _kernel_sum(X, Y, gamma) / (m * n)
    return float(kxx + kyy - 2.0 * kxy)


def wasserstein2_1d(a, b) -> float:
    """Squared W2 between two uniform empirical measures on the line.

    Integrates the squared difference of the two quantile functions over the
    merged breakpoints, which reduces to sorted pairing when sizes match.
    """
    a, b = np.sort(np.asarray(a, dtype=float)), np.sort(np.asarray(b, dtype=float))
    m, n = len(a), len(b)
    if m == n:
        return float(np.mean((a - b) ** 2))
    u = np.union1d(np.arange(1, m + 1) / m, np.arange(1, n + 1) / n)
    w = np.diff(np.concatenate([[0.0], u]))
    mid = u - 0.5 * w
    qa = a[np.minimum((mid * m).astype(int), m - 1)]
    qb = b[np.minimum((mid * n).astype(int), n - 1)]
    return float(np.sum(w * (qa - qb) ** 2))


def sliced_wasserstein2(X, Y, projections: int = 128, rng=None) -> float:
    """Mean squared W2 of 1-d projections onto random unit directions."""
    X, Y = _batch(X, "X"), _batch(Y, "Y")
    if len(X) == 0 or len(Y) == 0:
        raise ParameterError("sliced_wasserstein2 needs nonempty batches")
    D = X.shape[1]
    rng = np.random.default_rng(rng)
    theta = rng.standard_normal((projections, D))
    theta /= np.linalg.norm(theta, axis=1, keepdims=True)
    px, py = X @ theta.T, Y @ theta.T
    return float(np.mean([wasserstein2_1d(px[:, p], py[:, p]) for p in range(projections)]))


def moment_errors(X, dist) -> tuple[float, float]:
    """Infinity-norm mean error and Frobenius covariance error vs ``dist``."""
    X = _batch(X, "X")
    if len(X) == 0:
        raise ParameterError("moment_errors needs a nonempty batch")
    m = X.mean(axis=0)
    d = X - m
    cov = d.T @ d / len(X)
    return float(np.max(np.abs(m - dist.mean()))), float(np.linalg.norm(cov - dist.covariance()))


@dataclass
class MetricsReport:
    moment_mean_err: float
    moment_cov_err: float
    mmd2: float
    sliced_w2: float
    avg_loglik: float
    config: dict = field(default_factory=dict)
    seed: int | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def evaluate(samples, reference, dist, *, rng=None, bandwidth="median", projections: int = 128, config=None, seed=None) -> MetricsReport:
    """All metrics of ``samples`` against ``reference`` draws and ``dist``."""
    mean_err, cov_err = moment_errors(samples, dist)
    return MetricsReport(
        moment_mean_err=mean_err,
        moment_cov_err=cov_err,
        mmd2=mmd_squared(samples, reference, bandwidth),
        sliced_w2=sliced_wasserstein2(samples, reference, projections, rng),
        avg_loglik=float(np.mean(dist.log_density(samples))),
        config=dict(config or {}),
        seed=seed,
    )

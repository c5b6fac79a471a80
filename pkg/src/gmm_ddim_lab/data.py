"""Synthetic data distributions with exact sampling, moments and densities."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import ParameterError
from .schedule import Schedule

__all__ = [
    "MixtureDistribution",
    "PointCloud",
    "sample",
    "log_density",
    "noisy_marginal",
    "ring8",
    "grid25",
    "two_moons_gmm",
    "make_distribution",
    "load_component_table",
    "save_component_table",
    "BUILTIN_DISTRIBUTIONS",
]

_LOG_2PI = np.log(2.0 * np.pi)


def _check_weights(w):
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ParameterError("weights must be a nonempty 1-d sequence")
    if np.any(w <= 0):
        raise ParameterError("weights must be strictly positive")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ParameterError(f"weights must sum to 1 (got {w.sum()!r})")
    return w


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MixtureDistribution:
    """Weighted Gaussian mixture over ``R^D``.

    ``covariances`` may be given as full ``(M, D, D)`` matrices or as
    ``(M, D)`` diagonals; the stored form is always full.
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    labels: np.ndarray | None = None
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        w = _check_weights(self.weights)
        mu = np.atleast_2d(np.asarray(self.means, dtype=float))
        M, D = mu.shape
        if M != w.size:
            raise ParameterError(f"{w.size} weights but {M} means")
        cov = np.asarray(self.covariances, dtype=float)
        if cov.shape == (M, D):
            cov = np.einsum("mi,ij->mij", cov, np.eye(D))
        if cov.shape != (M, D, D):
            raise ParameterError(f"covariances must have shape ({M}, {D}, {D}) or ({M}, {D})")
        if not np.allclose(cov, np.swapaxes(cov, 1, 2), rtol=0, atol=1e-12):
            raise ParameterError("covariances must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ParameterError("covariances must be positive definite") from None
        if not np.all(np.isfinite(chol)) or np.any(np.diagonal(chol, axis1=1, axis2=2) <= 0):
            raise ParameterError("covariances must be positive definite")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "means", _frozen(mu))
        object.__setattr__(self, "covariances", _frozen(cov))
        object.__setattr__(self, "_chol", _frozen(chol))
        if self.labels is not None:
            labels = np.asarray(self.labels)
            if labels.shape != (M,):
                raise ParameterError(f"labels must have shape ({M},)")
            labels = labels.copy()
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    @property
    def dim(self) -> int:
        return int(self.means.shape[1])

    @property
    def n_components(self) -> int:
        return int(self.means.shape[0])

    @property
    def classes(self) -> np.ndarray:
        if self.labels is None:
            raise ParameterError("distribution has no labels")
        return np.unique(self.labels)

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        mbar = self.mean()
        second = np.einsum("m,mij->ij", self.weights, self.covariances)
        second += np.einsum("m,mi,mj->ij", self.weights, self.means, self.means)
        return second - np.outer(mbar, mbar)

    def component_log_pdf(self, x) -> np.ndarray:
        """Log of each component density at ``x``; shape ``(N, M)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[-1] != self.dim:
            raise ParameterError(f"expected points of dimension {self.dim}, got {x.shape[-1]}")
        diff = x[:, None, :] - self.means[None, :, :]
        L_inv = np.linalg.inv(self._chol)
        z = np.einsum("mij,nmj->nmi", L_inv, diff)
        logdet = np.log(np.diagonal(self._chol, axis1=1, axis2=2)).sum(axis=1)
        return -0.5 * np.sum(z * z, axis=-1) - logdet - 0.5 * self.dim * _LOG_2PI

    def log_density(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=float)
        out = logsumexp(self.component_log_pdf(x) + np.log(self.weights), axis=1)
        return float(out[0]) if x.ndim == 1 else out

    def restrict(self, label) -> "MixtureDistribution":
        """Sub-mixture of components carrying ``label``, renormalised."""
        if self.labels is None:
            raise ParameterError("distribution has no labels")
        mask = self.labels == label
        if not np.any(mask):
            raise ParameterError(f"unknown label {label!r}")
        w = self.weights[mask]
        return MixtureDistribution(w / w.sum(), self.means[mask], self.covariances[mask], self.labels[mask])


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Finite weighted point set: a sum of Dirac masses."""

    points: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] < 1:
            raise ParameterError("a point cloud needs at least one point")
        w = self.weights
        if w is None:
            w = np.full(pts.shape[0], 1.0 / pts.shape[0])
        w = _check_weights(w)
        if w.size != pts.shape[0]:
            raise ParameterError(f"{w.size} weights but {pts.shape[0]} points")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def dim(self) -> int:
        return int(self.points.shape[1])

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def covariance(self) -> np.ndarray:
        d = self.points - self.mean()
        return np.einsum("n,ni,nj->ij", self.weights, d, d)


def sample(dist, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` i.i.d. points; returns shape ``(count, D)``.

    Component indices are drawn first, then the Gaussian noise, both from
    ``rng``.
    """
    if count < 0:
        raise ParameterError("count must be nonnegative")
    if isinstance(dist, PointCloud):
        idx = rng.choice(dist.points.shape[0], size=count, p=dist.weights)
        return dist.points[idx].copy()
    idx = rng.choice(dist.n_components, size=count, p=dist.weights)
    z = rng.standard_normal((count, dist.dim))
    return dist.means[idx] + np.einsum("nij,nj->ni", dist._chol[idx], z)


def log_density(dist: MixtureDistribution, x) -> np.ndarray | float:
    """Mixture log-density with log-sum-exp stabilisation."""
    return dist.log_density(x)


def noisy_marginal(dist, schedule: Schedule, t: int) -> MixtureDistribution:
    """Data distribution pushed through ``q(x_t | x_0) = N(sqrt(a) x_0, (1 - a) I)``."""
    if not 1 <= t <= schedule.total_steps:
        raise ParameterError(f"t={t} outside [1, {schedule.total_steps}]")
    a = schedule.alpha(t)
    eye = np.eye(dist.dim)
    if isinstance(dist, PointCloud):
        n = dist.points.shape[0]
        return MixtureDistribution(dist.weights, np.sqrt(a) * dist.points, np.broadcast_to((1.0 - a) * eye, (n, *eye.shape)))
    cov = a * dist.covariances + (1.0 - a) * eye
    return MixtureDistribution(dist.weights, np.sqrt(a) * dist.means, cov, dist.labels)


# --- built-in benchmarks -------------------------------------------------
#
# Each lives in the first two coordinates of R^dim; extra coordinates carry
# the same per-component variance. GMM kernels need dim > K.


def _embed(means2d, dim):
    if dim < 2:
        raise ParameterError("built-in distributions need dim >= 2")
    out = np.zeros((means2d.shape[0], dim))
    out[:, :2] = means2d
    return out


def ring8(dim: int = 2, radius: float = 1.0, variance: float = 0.01) -> MixtureDistribution:
    """Eight equal modes evenly spaced on a circle."""
    theta = 2.0 * np.pi * np.arange(8) / 8
    means = _embed(radius * np.stack([np.cos(theta), np.sin(theta)], axis=1), dim)
    return MixtureDistribution(np.full(8, 1 / 8), means, np.full((8, dim), variance), np.arange(8))


def grid25(dim: int = 2, spacing: float = 1.0, variance: float = 0.01) -> MixtureDistribution:
    """5 x 5 grid of equal modes centred on the origin."""
    ticks = spacing * (np.arange(5) - 2.0)
    gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
    means = _embed(np.stack([gx.ravel(), gy.ravel()], axis=1), dim)
    return MixtureDistribution(np.full(25, 1 / 25), means, np.full((25, dim), variance), np.arange(25))


def two_moons_gmm(dim: int = 2, variance: float = 0.01) -> MixtureDistribution:
    """Two interleaved half-moons, five components each; labels are the moon."""
    theta = np.linspace(0.0, np.pi, 5)
    upper = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    lower = np.stack([1.0 - np.cos(theta), 0.5 - np.sin(theta)], axis=1)
    pts = np.concatenate([upper, lower]) - np.array([0.5, 0.25])
    labels = np.repeat([0, 1], 5)
    return MixtureDistribution(np.full(10, 0.1), _embed(pts, dim), np.full((10, dim), variance), labels)


BUILTIN_DISTRIBUTIONS = {"ring8": ring8, "grid25": grid25, "two_moons_gmm": two_moons_gmm}


def make_distribution(name: str, **params) -> MixtureDistribution:
    try:
        factory = BUILTIN_DISTRIBUTIONS[name]
    except KeyError:
        raise ParameterError(f"unknown distribution {name!r}; choose from {sorted(BUILTIN_DISTRIBUTIONS)}") from None
    return factory(**params)


def load_component_table(path) -> MixtureDistribution:
    """Read a whitespace-separated component table.

    One row per component: ``weight mean_1 .. mean_D var_1 .. var_D``.
    Lines starting with ``#`` are comments. Weights are renormalised only
    when they already sum to 1 within 1e-6.
    """
    rows = np.atleast_2d(np.loadtxt(Path(path), comments="#", dtype=float))
    ncol = rows.shape[1] - 1
    if ncol < 2 or ncol % 2:
        raise ParameterError(f"{path}: expected 1 + 2*D columns, got {rows.shape[1]}")
    D = ncol // 2
    w = rows[:, 0]
    if abs(w.sum() - 1.0) > 1e-6:
        raise ParameterError(f"{path}: weights sum to {w.sum()!r}, not 1")
    return MixtureDistribution(w / w.sum(), rows[:, 1 : 1 + D], rows[:, 1 + D :])


def save_component_table(dist: MixtureDistribution, path) -> None:
    """Write the diagonal of each covariance in the component-table format."""
    diag = np.diagonal(dist.covariances, axis1=1, axis2=2)
    table = np.column_stack([dist.weights, dist.means, diag])
    np.savetxt(Path(path), table, fmt="%.17g", header="weight mean[D] var[D]")

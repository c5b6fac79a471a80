"""Independent checks of the moment-matching and posterior claims.

The inference direction runs from ``tau[-1]`` (exact DDPM marginal) down to
``tau[0]`` with the true ``x_0`` plugged into each mixture kernel. Both the
exact enumeration and the Monte Carlo simulation below are written directly
from the kernel definition and do not reuse the sampler code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .data import MixtureDistribution, PointCloud
from .errors import CapExceededError, InvalidKernelError, ParameterError
from .kernels import GmmKernelParams, bank_at, clip_variances
from .schedule import Schedule, sigma_for_step

__all__ = [
    "MomentReport",
    "ElboReport",
    "marginal_components",
    "marginal_mixture",
    "closed_form_marginals",
    "monte_carlo_marginals",
    "elbo_weights",
    "elbo_bound",
    "exact_denoising_posterior",
    "forward_conditional_logdensity",
    "DEFAULT_CAP",
    "NU_FLOOR",
]

DEFAULT_CAP = 4096
NU_FLOOR = 1e-12
VARIANTS = ("full_cov", "diag_approx", "vub_clipped")


@dataclass
class MomentReport:
    """Per-step moment errors against ``sqrt(a_t) x0`` and ``(1 - a_t) I``.

    Rows follow ``steps`` (descending t). ``mean_se``/``cov_se`` are the
    standard errors aggregated in the same norm family as the check: the
    Euclidean norm of per-coordinate errors for the mean and the Frobenius
    norm of per-entry errors for the covariance. They are zero for the
    closed form.
    """

    steps: np.ndarray
    mean_err: np.ndarray
    cov_err: np.ndarray
    method: str
    count: int
    mean_err_l2: np.ndarray | None = None
    mean_se: np.ndarray | None = None
    cov_se: np.ndarray | None = None
    variant: str | None = None

    def within(self, n_se: float = 3.0) -> np.ndarray:
        """Per step: Euclidean mean error and Frobenius covariance error both within ``n_se`` aggregated standard errors."""
        return (self.mean_err_l2 <= n_se * self.mean_se) & (self.cov_err <= n_se * self.cov_se)


@dataclass
class ElboReport:
    steps: np.ndarray
    weights: np.ndarray
    nu: np.ndarray
    k2_coefficient: float
    degenerate: bool
    bound: float | None = None
    terms: np.ndarray | None = field(default=None, repr=False)


def _transition(schedule, i, eta):
    t, t_prev = schedule.step_pair(i)
    a_c, a_p = schedule.alpha(t), schedule.alpha(t_prev)
    sigma = sigma_for_step(schedule, i, eta)
    A = np.sqrt(max(1.0 - a_p - sigma**2, 0.0)) / np.sqrt(1.0 - a_c)
    return a_c, a_p, sigma, A


def _check_bank(schedule, bank):
    if len(bank) not in (1, schedule.num_substeps):
        raise ParameterError(f"kernel bank must have length 1 or {schedule.num_substeps}")


def marginal_components(x0, schedule: Schedule, bank, eta: float, stop_index: int = 0, cap: int = DEFAULT_CAP):
    """Exact mixture ``q(x_t | x0)`` at every ``tau`` index down to ``stop_index``.

    Returns a list indexed by tau position; entries above ``stop_index`` hold
    ``(weights, means, covs)``. The starting point is the DDPM marginal at
    ``tau[-1]``. Each transition maps a component (m, C) through the kernel
    to ``(sqrt(a_p) x0 + A (m - sqrt(a_c) x0) + delta_k, A^2 C + sigma^2 I - Delta_k)``.
    """
    x0 = np.asarray(x0, dtype=float)
    D = x0.size
    S = schedule.num_substeps
    _check_bank(schedule, bank)
    n = 1
    for i in range(S - 1, stop_index, -1):
        n *= bank_at(bank, i).components
        if n > cap:
            raise CapExceededError(f"exact enumeration needs more than {cap} components; use Monte Carlo")
    a_top = schedule.alpha(schedule.tau[-1])
    w = np.ones(1)
    m = (np.sqrt(a_top) * x0)[None]
    C = ((1.0 - a_top) * np.eye(D))[None]
    out = [None] * S
    out[S - 1] = (w, m, C)
    for i in range(S - 1, stop_index, -1):
        p = bank_at(bank, i)
        a_c, a_p, sigma, A = _transition(schedule, i, eta)
        Delta = p.full_cov_offsets()
        base = np.sqrt(a_p) * x0 + A * (m - np.sqrt(a_c) * x0)
        # new component index = old * K + k
        w = (w[:, None] * p.priors[None]).reshape(-1)
        m = (base[:, None, :] + p.deltas[None]).reshape(-1, D)
        C = (A**2 * C[:, None] + sigma**2 * np.eye(D) - Delta[None]).reshape(-1, D, D)
        out[i - 1] = (w, m, C)
    return out


def _mixture_moments(w, m, C):
    mean = w @ m
    d = m - mean
    cov = np.einsum("c,cij->ij", w, C) + np.einsum("c,ci,cj->ij", w, d, d)
    return mean, cov


def closed_form_marginals(x0, schedule: Schedule, bank, eta: float, cap: int = DEFAULT_CAP) -> MomentReport:
    """Enumerate the product mixtures and compare their moments to DDPM's."""
    comps = marginal_components(x0, schedule, bank, eta, 0, cap)
    x0 = np.asarray(x0, dtype=float)
    S = schedule.num_substeps
    steps, mean_err, mean_l2, cov_err = [], [], [], []
    for i in range(S - 1, -1, -1):
        t = int(schedule.tau[i])
        a = schedule.alpha(t)
        mean, cov = _mixture_moments(*comps[i])
        em = mean - np.sqrt(a) * x0
        steps.append(t)
        mean_err.append(np.abs(em).max())
        mean_l2.append(np.linalg.norm(em))
        cov_err.append(np.linalg.norm(cov - (1.0 - a) * np.eye(x0.size)))
    zeros = np.zeros(S)
    return MomentReport(np.array(steps), np.array(mean_err), np.array(cov_err), "closed_form", int(comps[0][0].size), np.array(mean_l2), zeros, zeros.copy())


def _psd_sqrt(cov, name):
    lam, V = np.linalg.eigh(cov)
    tol = 1e-12 * max(1.0, np.abs(lam).max())
    if lam.min() < -tol:
        raise InvalidKernelError(f"{name} covariance has eigenvalue {lam.min():.3g} < 0; the kernel is not a valid Gaussian mixture")
    return V * np.sqrt(np.clip(lam, 0.0, None))


def _variant_covariances(p: GmmKernelParams, sigma, variant):
    D = p.dim
    I = np.eye(D)
    if variant == "full_cov":
        return sigma**2 * I - p.full_cov_offsets()
    if variant == "diag_approx":
        diag = np.diagonal(p.full_cov_offsets(), axis1=1, axis2=2)
        return np.einsum("kd,de->kde", np.maximum(sigma**2 - diag, 0.0), I)
    if p.basis is None:
        raise ParameterError("vub_clipped needs an orthonormal basis (ORTHO or ORTHO_VUB bank)")
    U = p.basis
    K = p.components
    bounds = (p.scale**2 / (K * p.priors))[:, None] * p.priors[None]
    v = np.maximum(sigma**2 - bounds, 0.0)
    P = U @ U.T
    return np.stack([sigma**2 * (I - P) + (U * v[k]) @ U.T for k in range(K)])


def monte_carlo_marginals(x0, schedule: Schedule, bank, eta: float, variant: str = "full_cov", chains: int = 100_000, rng=None) -> MomentReport:
    """Simulate the inference process with the true ``x0`` and measure moments.

    ``full_cov`` uses ``sigma^2 I - Delta_k`` (raises InvalidKernelError when
    that is not PSD); ``diag_approx`` clips ``sigma^2 - diag(Delta_k)`` in the
    standard basis; ``vub_clipped`` clips ``sigma^2`` minus the eigenvalue
    upper bounds along the basis columns.
    """
    if variant not in VARIANTS:
        raise ParameterError(f"variant must be one of {VARIANTS}")
    _check_bank(schedule, bank)
    rng = np.random.default_rng(rng)
    x0 = np.asarray(x0, dtype=float)
    D = x0.size
    S = schedule.num_substeps
    a_top = schedule.alpha(schedule.tau[-1])

    # validate every kernel before spending time on simulation
    plans = {}
    for i in range(S - 1, 0, -1):
        p = bank_at(bank, i)
        a_c, a_p, sigma, A = _transition(schedule, i, eta)
        covs = _variant_covariances(p, sigma, variant)
        roots = np.stack([_psd_sqrt(c, f"step {i} component {k}") for k, c in enumerate(covs)])
        plans[i] = (p, a_c, a_p, A, roots)

    x = np.sqrt(a_top) * x0 + np.sqrt(1.0 - a_top) * rng.standard_normal((chains, D))
    stats = [_moment_stats(x, np.sqrt(a_top) * x0, (1.0 - a_top) * np.eye(D))]
    steps = [int(schedule.tau[-1])]
    for i in range(S - 1, 0, -1):
        p, a_c, a_p, A, roots = plans[i]
        k = rng.choice(p.components, size=chains, p=p.priors)
        z = rng.standard_normal((chains, D))
        x = np.sqrt(a_p) * x0 + A * (x - np.sqrt(a_c) * x0) + p.deltas[k] + np.einsum("nij,nj->ni", roots[k], z)
        t_prev = int(schedule.tau[i - 1])
        steps.append(t_prev)
        stats.append(_moment_stats(x, np.sqrt(a_p) * x0, (1.0 - a_p) * np.eye(D)))
    arr = lambda j: np.array([s[j] for s in stats])
    return MomentReport(np.array(steps), arr(0), arr(2), "monte_carlo", int(chains), arr(1), arr(3), arr(4), variant)


def _moment_stats(x, mean_target, cov_target):
    n = len(x)
    mean = x.mean(axis=0)
    d = x - mean
    prod = d[:, :, None] * d[:, None, :]
    cov = prod.mean(axis=0)
    em = mean - mean_target
    mean_se = np.sqrt(np.sum(d.var(axis=0) / n))
    cov_se = np.sqrt(np.sum(prod.var(axis=0) / n))
    return np.abs(em).max(), np.linalg.norm(em), np.linalg.norm(cov - cov_target), mean_se, cov_se


def elbo_weights(schedule: Schedule, bank, eta: float, sigma_1: float) -> ElboReport:
    """Loss weights of the matched-bound ELBO surrogate for each GMM step.

    Rows cover tau indices ``S-1 .. 1``; ``nu[k]`` is the smallest clipped
    variance of component k, floored at ``NU_FLOOR``.
    """
    _check_bank(schedule, bank)
    if not sigma_1 > 0:
        raise ParameterError("sigma_1 must be positive")
    S = schedule.num_substeps
    steps, weights, nus = [], [], []
    degenerate = False
    for i in range(S - 1, 0, -1):
        p = bank_at(bank, i)
        t = int(schedule.tau[i])
        a = schedule.alpha(t)
        sigma = sigma_for_step(schedule, i, eta)
        var, _ = clip_variances(sigma**2, p)
        nu = var.min(axis=1)
        degenerate |= bool(np.any(nu <= NU_FLOOR))
        nu = np.maximum(nu, NU_FLOOR)
        steps.append(t)
        nus.append(nu)
        weights.append(np.sum(p.priors / nu) * (1.0 - a) / (2.0 * a))
    a1 = schedule.alpha(schedule.tau[0])
    k2 = (1.0 - a1) / (2.0 * sigma_1**2 * a1)
    return ElboReport(np.array(steps, dtype=int), np.array(weights), np.array(nus).reshape(len(steps), -1) if nus else np.empty((0, 0)), float(k2), degenerate)


def elbo_bound(report: ElboReport, schedule: Schedule, bank, eta: float, samples, estimator, rng=None) -> ElboReport:
    """Evaluate the augmented simple loss on ``samples`` with ``estimator``.

    For every data point and every step, a mixture component of the forward
    marginal is drawn by sampling one kernel component per later transition;
    its accumulated mean shift is added to ``sqrt(a_t) x0 + sqrt(1 - a_t) eps``.
    """
    rng = np.random.default_rng(rng)
    x0 = np.atleast_2d(np.asarray(samples, dtype=float))
    n, D = x0.shape
    S = schedule.num_substeps
    shift = np.zeros((n, D))
    terms = np.zeros(S)
    weight_of = dict(zip(report.steps.tolist(), report.weights.tolist()))
    for i in range(S - 1, -1, -1):
        t = int(schedule.tau[i])
        a = schedule.alpha(t)
        eps = rng.standard_normal((n, D))
        x_t = np.sqrt(a) * x0 + shift + np.sqrt(1.0 - a) * eps
        err = np.sum((eps - estimator(x_t, t)) ** 2, axis=1).mean()
        terms[i] = (weight_of[t] if i > 0 else report.k2_coefficient) * err
        if i > 0:
            p = bank_at(bank, i)
            _, _, _, A = _transition(schedule, i, eta)
            k = rng.choice(p.components, size=n, p=p.priors)
            shift = A * shift + p.deltas[k]
    return ElboReport(report.steps, report.weights, report.nu, report.k2_coefficient, report.degenerate, float(terms.sum()), terms)


def _data_components(data):
    if isinstance(data, PointCloud):
        D = data.dim
        return data.weights, data.points, np.zeros((len(data.weights), D, D))
    if isinstance(data, MixtureDistribution):
        return data.weights, data.means, data.covariances
    raise ParameterError(f"unsupported data type {type(data).__name__}")


def exact_denoising_posterior(data, schedule: Schedule, params: GmmKernelParams | None, x_t, t: int, t_prev: int, eta: float) -> MixtureDistribution:
    """``q(x_prev | x_t)`` for the mixture kernel, marginalising the data.

    The marginal ``q(x_t | x0)`` is the DDPM Gaussian. For data component i
    (a Dirac point has zero covariance), ``x0 | x_t`` is Gaussian with mean
    ``m_i`` and covariance ``P_i``; the kernel is affine in ``x0`` so each
    (i, k) pair gives the Gaussian
    ``N(c0 m_i + c1 x_t + delta_k, c0^2 P_i + sigma^2 I - Delta_k)``.
    ``params=None`` means the single-Gaussian DDIM kernel.
    """
    x_t = np.asarray(x_t, dtype=float)
    w, mu, Sig = _data_components(data)
    D = mu.shape[1]
    if x_t.shape != (D,):
        raise ParameterError(f"x_t must have shape ({D},)")
    idx = [i for i in range(schedule.num_substeps) if schedule.step_pair(i) == (t, t_prev)]
    if not idx:
        raise ParameterError(f"({t}, {t_prev}) is not a step pair of the schedule")
    sigma = sigma_for_step(schedule, idx[0], eta)
    a_c, a_p = schedule.alpha(t), schedule.alpha(t_prev)
    I = np.eye(D)
    C = a_c * Sig + (1.0 - a_c) * I
    C_inv = np.linalg.inv(C)
    resid = x_t[None] - np.sqrt(a_c) * mu
    sign, logdet = np.linalg.slogdet(C)
    log_lik = -0.5 * np.einsum("mi,mij,mj->m", resid, C_inv, resid) - 0.5 * logdet - 0.5 * D * np.log(2 * np.pi)
    m_post = mu + np.sqrt(a_c) * np.einsum("mij,mjk,mk->mi", Sig, C_inv, resid)
    P_post = Sig - a_c * np.einsum("mij,mjk,mkl->mil", Sig, C_inv, Sig)

    root = np.sqrt(max(1.0 - a_p - sigma**2, 0.0))
    c1 = root / np.sqrt(1.0 - a_c)
    c0 = np.sqrt(a_p) - c1 * np.sqrt(a_c)
    if params is None:
        pi, deltas, Delta = np.ones(1), np.zeros((1, D)), np.zeros((1, D, D))
    else:
        pi, deltas, Delta = params.priors, params.deltas, params.full_cov_offsets()
    log_w = (np.log(w) + log_lik)[:, None] + np.log(pi)[None]
    weights = np.exp(log_w - logsumexp(log_w)).reshape(-1)
    means = (c0 * m_post + c1 * x_t)[:, None, :] + deltas[None]
    covs = (c0**2 * P_post)[:, None] + sigma**2 * I - Delta[None]
    # renormalise to absorb rounding so the weights sum to 1 to machine precision
    weights = weights / weights.sum()
    try:
        return MixtureDistribution(weights, means.reshape(-1, D), covs.reshape(-1, D, D))
    except ParameterError as exc:
        raise InvalidKernelError(f"posterior component covariance is not positive definite: {exc}") from None


def marginal_mixture(x0, schedule: Schedule, bank, eta: float, index: int, cap: int = DEFAULT_CAP) -> MixtureDistribution:
    """Exact forward marginal at ``tau[index]`` as a mixture density."""
    w, m, C = marginal_components(x0, schedule, bank, eta, index, cap)[index]
    try:
        return MixtureDistribution(w / w.sum(), m, C)
    except ParameterError as exc:
        raise InvalidKernelError(f"marginal component covariance is not positive definite: {exc}") from None


def forward_conditional_logdensity(x0, schedule: Schedule, bank, eta: float, index: int, x_t, x_prev, cap: int = DEFAULT_CAP) -> np.ndarray | float:
    """``log q(x_t | x_prev, x0)`` via Bayes' rule on the exact marginals.

    ``index`` (>= 1) selects the transition ``tau[index] -> tau[index - 1]``.
    ``x_t`` may be a batch; ``x_prev`` is a single point.
    """
    if index < 1:
        raise ParameterError("index must be >= 1 (a mixture transition)")
    x0 = np.asarray(x0, dtype=float)
    comps = marginal_components(x0, schedule, bank, eta, index - 1, cap)
    w_t, m_t, C_t = comps[index]
    w_p, m_p, C_p = comps[index - 1]
    q_t = MixtureDistribution(w_t / w_t.sum(), m_t, C_t)
    q_p = MixtureDistribution(w_p / w_p.sum(), m_p, C_p)

    p = bank_at(bank, index)
    a_c, a_p, sigma, A = _transition(schedule, index, eta)
    x_t = np.asarray(x_t, dtype=float)
    xb = np.atleast_2d(x_t)
    x_prev = np.asarray(x_prev, dtype=float)
    D = x0.size
    kernel_cov = sigma**2 * np.eye(D) - p.full_cov_offsets()
    centre = np.sqrt(a_p) * x0 + A * (xb - np.sqrt(a_c) * x0)  # (N, D)
    resid = x_prev[None, None, :] - centre[:, None, :] - p.deltas[None]  # (N, K, D)
    log_k = np.empty(resid.shape[:2])
    for k in range(p.components):
        L = np.linalg.cholesky(kernel_cov[k])
        z = np.linalg.solve(L, resid[:, k].T)
        log_k[:, k] = -0.5 * np.sum(z * z, axis=0) - np.log(np.diag(L)).sum() - 0.5 * D * np.log(2 * np.pi)
    log_trans = logsumexp(log_k + np.log(p.priors)[None], axis=1)
    out = log_trans + np.atleast_1d(q_t.log_density(xb)) - q_p.log_density(x_prev)
    return float(out[0]) if x_t.ndim == 1 else out

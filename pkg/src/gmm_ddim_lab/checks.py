"""Oracle suites behind the ``verify`` subcommand.

Every suite returns rows ``(step, quantity, value, tolerance, passed)``;
``step`` is the diffusion timestep a row refers to, or None for global rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import ExactDenoiser
from .data import MixtureDistribution
from .errors import InvalidKernelError
from .kernels import build_kernel_bank, validate_constraints
from .samplers import SamplerConfig, run_sampler
from .schedule import build_linear_schedule, select_substeps, sigma_for_step
from .verification import closed_form_marginals, elbo_weights, monte_carlo_marginals

__all__ = ["CheckRow", "ORACLES", "run_checks"]


@dataclass(frozen=True)
class CheckRow:
    step: int | None
    quantity: str
    value: float
    tolerance: float
    passed: bool


def _row(step, quantity, value, tol):
    return CheckRow(step, quantity, float(value), float(tol), bool(value <= tol))


def _setup(K, S, D, scheme, seed, scale, eta):
    base = build_linear_schedule(1000, 0.0015, 0.0195)
    sched = select_substeps(base, S)
    rng = np.random.default_rng(seed)
    bank = build_kernel_bank(scheme, S, False, D, K, None, scale, rng)
    x0 = rng.standard_normal(D)
    return base, sched, bank, x0, rng


def check_moments(K, S, D, scheme, seed, scale, eta, chains):
    _, sched, bank, x0, _ = _setup(K, S, D, scheme, seed, scale, eta)
    rep = closed_form_marginals(x0, sched, bank, eta)
    rows = []
    for t, me, ce in zip(rep.steps, rep.mean_err, rep.cov_err):
        rows += [_row(int(t), "closed_form_mean_err", me, 1e-10), _row(int(t), "closed_form_cov_err", ce, 1e-9)]
    return rows


def check_monte_carlo(K, S, D, scheme, seed, scale, eta, chains):
    _, sched, bank, x0, rng = _setup(K, S, D, scheme, seed, scale, eta)
    try:
        rep = monte_carlo_marginals(x0, sched, bank, eta, "full_cov", chains, rng)
    except InvalidKernelError:
        return [CheckRow(None, "full_cov_psd", float("nan"), 0.0, False)]
    rows = []
    for t, me, mse, ce, cse in zip(rep.steps, rep.mean_err_l2, rep.mean_se, rep.cov_err, rep.cov_se):
        rows += [_row(int(t), "mc_mean_err", me, 3 * mse), _row(int(t), "mc_cov_err", ce, 3 * cse)]
    return rows


def check_bounds(K, S, D, scheme, seed, scale, eta, chains):
    _, sched, bank, _, _ = _setup(K, S, D, scheme, seed, scale, eta)
    rows = []
    for i in range(1, S):
        t = int(sched.tau[i])
        rep = validate_constraints(bank[i])
        rows += [
            _row(t, "weighted_mean_offset", rep.max_mean_residual, rep.tol),
            _row(t, "cov_offset_residual", rep.max_cov_residual, rep.tol),
            _row(t, "diag_surrogate_residual", rep.max_diag_residual, rep.tol),
            _row(t, "eigenvalue_bracket_excess", max(rep.max_bound_excess, 0.0), rep.tol),
        ]
    return rows


def check_reduction(K, S, D, scheme, seed, scale, eta, chains):
    base = build_linear_schedule(1000, 0.0015, 0.0195)
    dist = MixtureDistribution([0.5, 0.5], np.stack([np.ones(D), -np.ones(D)]), np.full((2, D), 0.05))
    den = ExactDenoiser(dist, base)
    n = min(chains, 256)
    ref = run_sampler(SamplerConfig("ddim", eta, S, record_trajectory=True), den, base, n, seed)
    rows = []
    for label, k, s in (("K1", 1, scale), ("s0", K, 0.0)):
        bank = build_kernel_bank(scheme, S, False, D, k, None, s, seed)
        run = run_sampler(SamplerConfig("ddim_gmm", eta, S, bank, record_trajectory=True), den, base, n, seed)
        rows.append(_row(None, f"trajectory_max_abs_diff_{label}", np.max(np.abs(run.trajectories - ref.trajectories)), 0.0))
    return rows


def check_elbo(K, S, D, scheme, seed, scale, eta, chains):
    _, sched, bank, _, _ = _setup(K, S, D, scheme, seed, scale, eta)
    sigma_1 = max(sigma_for_step(sched, 1, max(eta, 1e-3)), 1e-6) if S > 1 else 1.0
    rep = elbo_weights(sched, bank, eta, sigma_1)
    rows = []
    for row, t in enumerate(rep.steps):
        a = sched.alpha(int(t))
        i = int(np.searchsorted(sched.tau, t))
        p = bank[i]
        sig2 = sigma_for_step(sched, i, eta) ** 2
        brute = 0.0
        for k in range(p.components):
            nu = max(min(max(sig2 - o, 0.0) for o in p.cov_diag_offsets[k]), 1e-12)
            brute += p.priors[k] / nu * (1 - a) / (2 * a)
        rows.append(_row(int(t), "elbo_weight_rel_err", abs(rep.weights[row] - brute) / brute, 1e-12))
    return rows


ORACLES = {
    "moments": check_moments,
    "montecarlo": check_monte_carlo,
    "bounds": check_bounds,
    "reduction": check_reduction,
    "elbo": check_elbo,
}


def run_checks(oracle="all", *, K=2, S=3, D=4, scheme="ortho", seed=0, scale=0.01, eta=1.0, chains=20_000) -> list[CheckRow]:
    """Run one oracle suite, or every suite when ``oracle == "all"``."""
    names = list(ORACLES) if oracle == "all" else [oracle]
    rows = []
    for name in names:
        rows += ORACLES[name](K, S, D, scheme, seed, scale, eta, chains)
    return rows

"""Checking that a mixture kernel bank preserves the DDIM marginals.

Builds a short ORTHO bank, then compares the marginals of x_t given x_0:
first by closed-form mixture propagation, then by Monte Carlo. Also prints
the eigenvalue brackets of one component's covariance offset next to the
actual spectrum.

Run: python demos/moment_checks.py
"""

import numpy as np

from gmm_ddim_lab import (
    build_kernel_bank,
    build_linear_schedule,
    closed_form_marginals,
    eigenvalue_brackets,
    monte_carlo_marginals,
    select_substeps,
)

rng = np.random.default_rng(0)
K, S, D, s, eta = 3, 4, 6, 0.02, 1.0

schedule = select_substeps(build_linear_schedule(1000, 0.0015, 0.0195), S)
bank = build_kernel_bank("ortho", S, False, D, K, [0.5, 0.3, 0.2], s, rng)
x0 = rng.standard_normal(D)

exact = closed_form_marginals(x0, schedule, bank, eta)
print("closed form, per step t:")
for t, me, ce in zip(exact.steps, exact.mean_err, exact.cov_err):
    print(f"  t={t:4d}  mean err {me:.1e}  cov err {ce:.1e}")

mc = monte_carlo_marginals(x0, schedule, bank, eta, "full_cov", 50_000, rng)
print("Monte Carlo (50k chains), error / standard error:")
for t, me, mse, ce, cse in zip(mc.steps, mc.mean_err_l2, mc.mean_se, mc.cov_err, mc.cov_se):
    print(f"  t={t:4d}  mean {me / mse:.2f}  cov {ce / cse:.2f}")

params = bank[1]
for k in range(K):
    lam = np.linalg.eigvalsh(params.full_cov_offsets()[k])[-K:]
    lo, hi = eigenvalue_brackets(params.priors, s, k)
    pairs = "  ".join(f"[{a:.2e}, {b:.2e}]" for a, b in zip(lo, hi))
    print(f"component {k}: eigenvalues {' '.join(f'{v:.2e}' for v in lam)}")
    print(f"             brackets    {pairs}")

"""Few-step sampling on ring8: plain DDIM against the mixture kernel.

With only ten steps the Gaussian reverse kernel blurs the eight modes. The
ORTHO-VUB mixture kernel splits each step into K Gaussians whose offsets
keep the first two moments unchanged, so any gain comes from higher-order
structure. We sweep the offset scale s and print sliced W2 and MMD^2
averaged over a handful of paired seeds.

Run: python demos/few_step_trend.py
"""

import numpy as np

from gmm_ddim_lab import (
    ExactDenoiser,
    SamplerConfig,
    build_kernel_bank,
    build_linear_schedule,
    mmd_squared,
    ring8,
    run_sampler,
    sample,
    sliced_wasserstein2,
)

STEPS, ETA, CHAINS, SEEDS = 10, 1.0, 2000, range(5)

schedule = build_linear_schedule(1000, 0.0015, 0.0195)
# embed the ring in 32 dimensions so K = 8 orthonormal offset directions fit
dist = ring8(dim=32)
denoiser = ExactDenoiser(dist, schedule)


def score(bank, seed):
    kind = "ddim" if bank is None else "ddim_gmm"
    run = run_sampler(SamplerConfig(kind, ETA, STEPS, bank), denoiser, schedule, CHAINS, seed)
    ref = sample(dist, CHAINS, np.random.default_rng([seed, 2]))
    return sliced_wasserstein2(run.finals, ref, 128, [seed, 3]), mmd_squared(run.finals, ref)


def report(label, make_bank):
    sw, mmd = np.mean([score(make_bank(seed), seed) for seed in SEEDS], axis=0)
    print(f"{label:<22} sliced_w2={sw:.5f}  mmd2={mmd:.2e}")


report("DDIM", lambda seed: None)
for s in (0.01, 0.1, 0.5, 1.0, 10.0):
    report(f"ORTHO-VUB K=8 s={s}", lambda seed: build_kernel_bank("ortho_vub", STEPS, False, dist.dim, 8, None, s, [seed, 1]))

# Small s recovers DDIM; very large s is clipped back to the
# deterministic step. The useful range sits in between.

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from gmm_ddim_lab import (
    ExactDenoiser,
    GuidanceConfig,
    GuidedDenoiser,
    MixtureDistribution,
    ParameterError,
    PointCloud,
    SamplerConfig,
    VarianceOverflowError,
    build_kernel_bank,
    build_linear_schedule,
    ddim_gmm_step,
    ddim_step,
    ddpm_step,
    make_ortho,
    make_ortho_vub,
    ring8,
    run_sampler,
    select_substeps,
    sigma_for_step,
)


@pytest.fixture(scope="module")
def two_mode():
    return MixtureDistribution([0.4, 0.6], [[1.0, 0.0, 0.5], [-1.0, 0.5, 0.0]], np.full((2, 3), 0.05), labels=[0, 1])


def test_ddpm_final_step_deterministic(paper_schedule, rng):
    x = rng.standard_normal((5, 2))
    eps = rng.standard_normal((5, 2))
    a = ddpm_step(x, 1, eps, paper_schedule, np.random.default_rng(0))
    b = ddpm_step(x, 1, eps, paper_schedule, np.random.default_rng(1))
    np.testing.assert_array_equal(a, b)


def test_ddpm_vanishing_beta_is_identity(rng):
    s = build_linear_schedule(3, 1e-14, 1e-14)
    x = rng.standard_normal((4, 2))
    out = ddpm_step(x, 2, rng.standard_normal((4, 2)), s, rng)
    np.testing.assert_allclose(out, x, atol=1e-6)


def test_ddim_deterministic_dirac(paper_schedule, rng):
    x0 = np.array([0.7, -0.2])
    x = rng.standard_normal((6, 2))
    t, tp = 500, 400
    a, ap = paper_schedule.alpha(t), paper_schedule.alpha(tp)
    eps = (x - np.sqrt(a) * x0) / np.sqrt(1 - a)
    out = ddim_step(x, t, tp, eps, 0.0, paper_schedule)
    expected = np.sqrt(ap) * x0 + np.sqrt(1 - ap) * (x - np.sqrt(a) * x0) / np.sqrt(1 - a)
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_ddim_eta1_matches_ddpm_step(paper_schedule):
    # consecutive steps: same conditional mean and variance, checked by Monte Carlo
    t = 300
    n = 100_000
    x = np.full((n, 2), 0.4)
    eps = np.tile([0.3, -0.8], (n, 1))
    sigma = sigma_for_step(paper_schedule, t - 1, 1.0)
    a = ddim_step(x, t, t - 1, eps, sigma, paper_schedule, np.random.default_rng(0))
    b = ddpm_step(x, t, eps, paper_schedule, np.random.default_rng(1))
    se = np.sqrt(a.var(axis=0) / n + b.var(axis=0) / n)
    assert np.all(np.abs(a.mean(axis=0) - b.mean(axis=0)) < 3 * se)
    var_se = np.sqrt(2.0 / n) * sigma**2 * np.sqrt(2)
    assert np.all(np.abs(a.var(axis=0) - b.var(axis=0)) < 3 * var_se)
    np.testing.assert_allclose(a.mean(axis=0), ddim_step(x[:1], t, t - 1, eps[:1], sigma, paper_schedule)[0], atol=5 * sigma / np.sqrt(n))


def test_ddim_maximal_sigma_ignores_xt(paper_schedule):
    t, tp = 500, 300
    ap = paper_schedule.alpha(tp)
    sigma = np.sqrt(1 - ap)
    a = paper_schedule.alpha(t)
    x0 = np.array([1.0, 2.0])
    outs = []
    for x in (np.zeros(2), np.ones(2) * 5):
        eps = (x - np.sqrt(a) * x0) / np.sqrt(1 - a)
        outs.append(ddim_step(x, t, tp, eps, sigma, paper_schedule))
    np.testing.assert_allclose(outs[0], outs[1], atol=1e-12)
    np.testing.assert_allclose(outs[0], np.sqrt(ap) * x0, atol=1e-12)


def test_variance_overflow(paper_schedule):
    with pytest.raises(VarianceOverflowError):
        ddim_step(np.zeros(2), 500, 300, np.zeros(2), 1.0, paper_schedule)


def test_gmm_zero_scale_equals_ddim(paper_schedule, rng):
    x = rng.standard_normal((50, 5))
    eps = rng.standard_normal((50, 5))
    sigma = sigma_for_step(select_substeps(paper_schedule, 10), 5, 1.0)
    p = make_ortho_vub(5, 3, scale=0.0, rng=0)
    a, _ = ddim_gmm_step(x, 501, 401, eps, sigma, p, paper_schedule, np.random.default_rng(3), np.random.default_rng(4))
    b = ddim_step(x, 501, 401, eps, sigma, paper_schedule, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)


def test_gmm_deterministic_offsets(paper_schedule, rng):
    x = rng.standard_normal((200, 12))
    eps = rng.standard_normal((200, 12))
    p = make_ortho(12, 8, scale=10.0, rng=1)
    out, comps = ddim_gmm_step(x, 501, 401, eps, 0.0, p, paper_schedule, rng, rng)
    diff = out - ddim_step(x, 501, 401, eps, 0.0, paper_schedule)
    np.testing.assert_allclose(diff, p.deltas[comps], atol=1e-12)
    d = np.linalg.norm(diff[:, None, :] - p.deltas[None], axis=2)
    assert np.all(d.min(axis=1) < 1e-12)


def test_gmm_vub_rotated_variances(paper_schedule):
    D, K, s = 10, 4, 0.2
    p = make_ortho_vub(D, K, scale=s, rng=5)
    n = 200_000
    x = np.zeros((n, D))
    eps = np.zeros((n, D))
    sigma = sigma_for_step(select_substeps(paper_schedule, 10), 5, 1.0)
    out, comps = ddim_gmm_step(x, 501, 401, eps, sigma, p, paper_schedule, np.random.default_rng(0), np.random.default_rng(1))
    noise = out - ddim_step(x, 501, 401, eps, sigma, paper_schedule) - p.deltas[comps]
    proj = noise @ p.basis
    expected = max(0.0, sigma**2 - s**2 / K)
    np.testing.assert_allclose(proj.var(axis=0), expected, rtol=4 * np.sqrt(2 / n))
    Q, _ = np.linalg.qr(np.concatenate([p.basis, np.random.default_rng(2).standard_normal((D, D - K))], axis=1))
    comp = noise @ Q[:, K:]
    np.testing.assert_allclose(comp.var(axis=0), sigma**2, rtol=4 * np.sqrt(2 / n))


def test_empty_run(paper_schedule, two_mode):
    run = run_sampler(SamplerConfig("ddim", 0.0, 10, record_trajectory=True), ExactDenoiser(two_mode, paper_schedule), paper_schedule, 0, 1)
    assert run.finals.shape == (0, 3) and run.trajectories.shape == (10, 0, 3)


def test_run_shapes_and_determinism(paper_schedule, two_mode):
    den = ExactDenoiser(two_mode, paper_schedule)
    cfg = SamplerConfig("ddim", 0.0, 10, record_trajectory=True)
    a = run_sampler(cfg, den, paper_schedule, 300, 9)
    b = run_sampler(cfg, den, paper_schedule, 300, 9)
    assert a.finals.shape == (300, 3) and a.trajectories.shape == (10, 300, 3)
    np.testing.assert_array_equal(a.finals, b.finals)
    np.testing.assert_array_equal(a.trajectories[-1], a.finals)
    assert run_sampler(SamplerConfig("ddim", 0.0, 10), den, paper_schedule, 3, 9).trajectories is None


def test_threads_match_serial(paper_schedule, two_mode):
    bank = build_kernel_bank("ortho_vub", 10, False, 3, 2, None, 0.1, 0)
    cfg = SamplerConfig("ddim_gmm", 1.0, 10, bank)
    den = ExactDenoiser(two_mode, paper_schedule)
    a = run_sampler(cfg, den, paper_schedule, 1000, 4, workers=1, block_size=128)
    b = run_sampler(cfg, den, paper_schedule, 1000, 4, workers=4, block_size=128)
    np.testing.assert_array_equal(a.finals, b.finals)


def test_config_validation():
    with pytest.raises(ParameterError):
        SamplerConfig("ddim", 1.5, 10)
    with pytest.raises(ParameterError):
        SamplerConfig("ddim_gmm", 1.0, 10)
    with pytest.raises(ParameterError):
        SamplerConfig("ddim", 1.0, 10, kernel_bank=(make_ortho(3, 2, rng=0),))
    with pytest.raises(ParameterError):
        SamplerConfig("euler", 1.0, 10)


def test_ddpm_requires_full_schedule(paper_schedule, two_mode):
    with pytest.raises(ParameterError):
        run_sampler(SamplerConfig("ddpm", 1.0, 10), ExactDenoiser(two_mode, paper_schedule), paper_schedule, 5, 0)


def test_clip_events_counted(paper_schedule):
    dist = ring8(dim=12)
    bank = build_kernel_bank("ortho_vub", 10, True, 12, 8, None, 10.0, 0)
    run = run_sampler(SamplerConfig("ddim_gmm", 1.0, 10, bank), ExactDenoiser(dist, paper_schedule), paper_schedule, 10, 0)
    # s^2 / K = 12.5 exceeds every sigma^2, so all K axes clip for every component and step
    assert run.clip_events == 9 * 8 * 8


def _ddpm_variance_recursion(schedule, v0):
    """Exact finals variance of the ancestral sampler for 1-d Gaussian data."""
    a = np.concatenate([[1.0], schedule.alphas_cum])
    v = a * v0 + 1 - a
    x = 1.0
    for t in range(schedule.total_steps, 0, -1):
        beta, at, ap = schedule.betas[t - 1], a[t], a[t - 1]
        gain = np.sqrt(at) * v0 / v[t]
        A = np.sqrt(ap) * beta / (1 - at) * gain + np.sqrt(1 - beta) * (1 - ap) / (1 - at)
        x = A * A * x + ((1 - ap) / (1 - at) * beta if t > 1 else 0.0)
    return x


def test_ddpm_recovers_single_gaussian(paper_schedule):
    v0 = np.array([4.0, 1.0])
    dist = MixtureDistribution([1.0], [[1.0, -0.5]], [v0])
    n = 100_000
    run = run_sampler(SamplerConfig("ddpm", 1.0, 1000), ExactDenoiser(dist, paper_schedule), paper_schedule, n, 11, workers=4)
    x = run.finals
    assert np.all(np.abs(x.mean(axis=0) - dist.means[0]) < 3 * np.sqrt(v0 / n))
    predicted = np.array([_ddpm_variance_recursion(paper_schedule, v) for v in v0])
    assert np.all(np.abs(x.var(axis=0) - predicted) < 3 * predicted * np.sqrt(2 / n))
    np.testing.assert_allclose(x.var(axis=0), v0, rtol=0.02)


@settings(max_examples=8, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(steps=st.sampled_from([1, 2, 10, 37]), eta=st.sampled_from([0.0, 0.3, 1.0]), seed=st.integers(0, 2**63 - 1), scheme=st.sampled_from(["rand", "ortho", "ortho_vub"]))
def test_reduction_bitwise(paper_schedule, two_mode, steps, eta, seed, scheme):
    den = ExactDenoiser(two_mode, paper_schedule)
    ref = run_sampler(SamplerConfig("ddim", eta, steps, record_trajectory=True), den, paper_schedule, 64, seed)
    for K, s in ((1, 2.0), (2, 0.0)):
        bank = build_kernel_bank(scheme, steps, False, 3, K, None, s, seed)
        run = run_sampler(SamplerConfig("ddim_gmm", eta, steps, bank, record_trajectory=True), den, paper_schedule, 64, seed)
        np.testing.assert_array_equal(run.trajectories, ref.trajectories)


@pytest.mark.parametrize("mode", ["classifier", "classifier_free"])
def test_zero_guidance_scale_is_unguided(paper_schedule, two_mode, mode):
    den = ExactDenoiser(two_mode, paper_schedule)
    plain = run_sampler(SamplerConfig("ddim", 1.0, 10), den, paper_schedule, 64, 3)
    guided = run_sampler(SamplerConfig("ddim", 1.0, 10, guidance=GuidanceConfig(mode, 0.0, 1)), den, paper_schedule, 64, 3)
    np.testing.assert_array_equal(guided.finals, plain.finals)


@pytest.mark.parametrize("mode", ["classifier", "classifier_free"])
def test_guidance_reaches_target_class(paper_schedule, two_mode, mode):
    cfg = GuidanceConfig(mode, 2.0, 0)
    run = run_sampler(SamplerConfig("ddim", 0.0, 20, guidance=cfg), ExactDenoiser(two_mode, paper_schedule), paper_schedule, 500, 1)
    # label 0 sits at x_0 = +1
    assert np.mean(run.finals[:, 0] > 0) > 0.99


def test_guidance_not_applied_twice(paper_schedule, two_mode):
    cfg = GuidanceConfig("classifier", 1.0, 0)
    guided = GuidedDenoiser(ExactDenoiser(two_mode, paper_schedule), two_mode, paper_schedule, cfg)
    with pytest.raises(ParameterError, match="unguided"):
        run_sampler(SamplerConfig("ddim", 0.0, 10, guidance=cfg), guided, paper_schedule, 8, 0)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmm_ddim_lab import (
    ExactDenoiser,
    MixtureDistribution,
    ParameterError,
    SamplerConfig,
    evaluate,
    mmd_squared,
    moment_errors,
    ring8,
    run_sampler,
    sample,
    sliced_wasserstein2,
)
from gmm_ddim_lab.metrics import median_bandwidth, wasserstein2_1d


def test_mmd_same_distribution_near_zero(rng):
    # permutation null gives the spread of the estimator under H0
    X = rng.standard_normal((300, 2))
    Y = rng.standard_normal((300, 2))
    stat = mmd_squared(X, Y, 1.0)
    Z = np.concatenate([X, Y])
    null = []
    for _ in range(100):
        p = rng.permutation(600)
        null.append(mmd_squared(Z[p[:300]], Z[p[300:]], 1.0))
    assert abs(stat - np.mean(null)) < 3 * np.std(null)


def test_mmd_separated(rng):
    X = rng.standard_normal((500, 2))
    Y = rng.standard_normal((500, 2)) + [10.0, 0.0]
    assert mmd_squared(X, Y) > 0.5


def test_mmd_two_point_hand_computation():
    X = np.array([[0.0], [0.0]])
    Y = np.array([[1.0], [1.0]])
    h = 0.7
    k = np.exp(-1.0 / (2 * h * h))
    # both within-batch terms are exp(0) = 1; cross term is k
    assert mmd_squared(X, Y, h) == pytest.approx(2.0 - 2.0 * k, abs=1e-15)


def test_mmd_small_batch():
    with pytest.raises(ParameterError):
        mmd_squared(np.zeros((1, 2)), np.zeros((3, 2)))


def test_median_bandwidth_direct(rng):
    X, Y = rng.standard_normal((20, 2)), rng.standard_normal((15, 2))
    Z = np.concatenate([X, Y])
    d = np.linalg.norm(Z[:, None] - Z[None], axis=2)[np.triu_indices(35, 1)]
    assert median_bandwidth(X, Y) == pytest.approx(np.median(d), rel=1e-14)


def test_sliced_identical_is_zero(rng):
    X = rng.standard_normal((100, 3))
    assert sliced_wasserstein2(X, X, 16, 0) == 0.0


def test_w2_point_masses():
    assert wasserstein2_1d([0.0], [1.0]) == 1.0
    assert sliced_wasserstein2(np.array([[0.0]]), np.array([[1.0]]), 4, 0) == pytest.approx(1.0, abs=1e-15)


def test_w2_unequal_sizes_quantile_oracle(rng):
    a, b = rng.standard_normal(7), rng.standard_normal(11) + 0.5
    u = np.linspace(0, 1, 200_001)[1:-1]
    qa, qb = np.quantile(a, u, method="inverted_cdf"), np.quantile(b, u, method="inverted_cdf")
    assert wasserstein2_1d(a, b) == pytest.approx(np.mean((qa - qb) ** 2), rel=1e-3)


def test_moment_errors_examples():
    dist = MixtureDistribution([1.0], np.zeros((1, 3)), np.eye(3)[None])
    m, c = moment_errors(np.zeros((10, 3)), dist)
    assert m == 0 and c == pytest.approx(np.sqrt(3), abs=1e-15)
    d1 = MixtureDistribution([1.0], np.zeros((1, 1)), np.ones((1, 1, 1)))
    m, c = moment_errors(np.array([[-1.0], [1.0]]), d1)
    assert m == 0 and c == 0


def test_moment_errors_shrink_with_n():
    dist = ring8()
    errs = []
    for n in (1_000, 100_000):
        x = sample(dist, n, np.random.default_rng(n))
        errs.append(moment_errors(x, dist)[0])
    se = np.sqrt(np.diag(dist.covariance()).max() / 100_000)
    assert errs[1] < 4 * se


def test_ddpm_beats_ddim10_on_sliced_w2(paper_schedule):
    dist = ring8()
    ref = sample(dist, 10_000, np.random.default_rng(0))
    den = ExactDenoiser(dist, paper_schedule)
    ddim = run_sampler(SamplerConfig("ddim", 0.0, 10), den, paper_schedule, 10_000, 1).finals
    ddpm = run_sampler(SamplerConfig("ddpm", 1.0, 1000), den, paper_schedule, 10_000, 1, workers=4).finals
    assert sliced_wasserstein2(ddpm, ref, 64, 5) < sliced_wasserstein2(ddim, ref, 64, 5)


def test_evaluate_report(rng):
    dist = ring8()
    x = sample(dist, 500, rng)
    rep = evaluate(x, sample(dist, 500, rng), dist, rng=0, config={"k": 1}, seed=3)
    d = rep.as_dict()
    assert np.isfinite([rep.mmd2, rep.sliced_w2, rep.avg_loglik]).all()
    assert rep.sliced_w2 >= 0 and d["config"] == {"k": 1} and d["seed"] == 3


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 40), m=st.integers(2, 40))
def test_symmetry_and_permutation_invariance(seed, n, m):
    r = np.random.default_rng(seed)
    X, Y = r.standard_normal((n, 2)), r.standard_normal((m, 2)) + 0.3
    h = 0.9
    assert mmd_squared(X, Y, h) == pytest.approx(mmd_squared(Y, X, h), abs=1e-12)
    assert mmd_squared(X[r.permutation(n)], Y, h) == pytest.approx(mmd_squared(X, Y, h), abs=1e-12)
    assert sliced_wasserstein2(X, Y, 8, 1) == pytest.approx(sliced_wasserstein2(Y, X, 8, 1), abs=1e-12)
    assert sliced_wasserstein2(X[r.permutation(n)], Y, 8, 1) == pytest.approx(sliced_wasserstein2(X, Y, 8, 1), abs=1e-12)
    assert sliced_wasserstein2(X, Y, 8, 1) >= 0

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gmm_ddim_lab import ParameterError, ScheduleOrderError, build_linear_schedule, select_substeps, sigma_for_step, sigmas
from gmm_ddim_lab.schedule import Schedule


def test_paper_schedule_endpoints(paper_schedule):
    assert paper_schedule.beta(1) == 0.0015
    assert paper_schedule.beta(1000) == pytest.approx(0.0195, abs=1e-15)
    assert paper_schedule.total_steps == 1000


def test_single_step_product():
    np.testing.assert_allclose(build_linear_schedule(1, 0.02, 0.02).alphas_cum, [0.98], rtol=0, atol=1e-15)


def test_two_step_product():
    np.testing.assert_allclose(build_linear_schedule(2, 0.1, 0.2).alphas_cum, [0.9, 0.72], rtol=0, atol=1e-15)


@pytest.mark.parametrize("args, field", [((0, 0.1, 0.2), "total_steps"), ((10, 0.0, 0.2), "beta_start"),
                                         ((10, 0.3, 0.2), "beta_end"), ((10, 0.1, 1.0), "beta_end")])
def test_invalid_range_names_field(args, field):
    with pytest.raises(ParameterError, match=field):
        build_linear_schedule(*args)


def test_alpha_zero_is_one(paper_schedule):
    assert paper_schedule.alpha(0) == 1.0
    with pytest.raises(ParameterError):
        paper_schedule.alpha(1001)


def test_arrays_are_read_only(paper_schedule):
    with pytest.raises(ValueError):
        paper_schedule.betas[0] = 0.5


@pytest.mark.parametrize("T, count, expected", [(4, 2, [1, 3]), (1000, 10, list(range(1, 1000, 100)))])
def test_select_substeps_stride(T, count, expected):
    s = select_substeps(build_linear_schedule(T, 0.01, 0.02), count)
    np.testing.assert_array_equal(s.tau, expected)


def test_select_substeps_identity(paper_schedule):
    np.testing.assert_array_equal(select_substeps(paper_schedule, 1000).tau, np.arange(1, 1001))


def test_select_substeps_too_many(paper_schedule):
    with pytest.raises(ParameterError):
        select_substeps(paper_schedule, 1001)


def test_sigma_zero_eta(paper_schedule):
    s = select_substeps(paper_schedule, 10)
    assert np.all(sigmas(s, 0.0) == 0.0)


def test_sigma_eta_one_matches_ddpm_posterior(paper_schedule):
    for t in (2, 10, 500, 1000):
        expected = (1 - paper_schedule.alpha(t - 1)) / (1 - paper_schedule.alpha(t)) * paper_schedule.beta(t)
        assert sigma_for_step(paper_schedule, t - 1, 1.0) ** 2 == pytest.approx(expected, rel=1e-10)


def test_sigma_hand_value():
    s = build_linear_schedule(2, 0.1, 0.2)
    assert sigma_for_step(s, 1, 0.5) == pytest.approx(0.5 * np.sqrt(0.1 / 0.28) * np.sqrt(1 - 0.8), abs=1e-12)
    assert sigma_for_step(s, 1, 0.5) == pytest.approx(0.13363, abs=1e-5)


def test_sigma_final_step_is_zero(paper_schedule):
    assert sigma_for_step(select_substeps(paper_schedule, 10), 0, 1.0) == 0.0


def test_schedule_order_error():
    # hand-built schedule whose alphas increase
    s = Schedule(np.array([0.1, 0.1]), np.array([0.5, 0.6]), np.array([1, 2]))
    with pytest.raises(ScheduleOrderError):
        sigma_for_step(s, 1, 1.0)


def test_invalid_tau_rejected(paper_schedule):
    with pytest.raises(ParameterError):
        paper_schedule.with_tau([3, 2])


@settings(max_examples=50, deadline=None)
@given(T=st.integers(1, 300), b0=st.floats(1e-5, 0.05), span=st.floats(0.0, 0.5))
def test_alphas_monotone_and_recursive(T, b0, span):
    s = build_linear_schedule(T, b0, min(b0 + span, 0.9))
    a = s.alphas_cum
    assert np.all(np.diff(a) < 0) and np.all((a > 0) & (a < 1))
    np.testing.assert_allclose(a[1:], a[:-1] * (1 - s.betas[1:]), rtol=0, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(count=st.integers(1, 1000), eta=st.floats(0.0, 1.0))
def test_sigma_linear_in_eta(paper_schedule, count, eta):
    s = select_substeps(paper_schedule, count)
    assert s.num_substeps == count
    i = count - 1
    assert sigma_for_step(s, i, eta) == pytest.approx(eta * sigma_for_step(s, i, 1.0), rel=1e-12, abs=0)

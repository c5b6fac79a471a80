"""Gaussian-mixture reverse kernels for DDIM sampling on synthetic data."""

from .data import (
    MixtureDistribution,
    PointCloud,
    grid25,
    load_component_table,
    log_density,
    make_distribution,
    noisy_marginal,
    ring8,
    sample,
    save_component_table,
    two_moons_gmm,
)
from .denoiser import ExactDenoiser, GuidanceConfig, GuidedDenoiser, exact_epsilon, guided_epsilon
from .errors import (
    CapExceededError,
    InvalidKernelError,
    ParameterError,
    ScheduleOrderError,
    SingularStepError,
    VarianceOverflowError,
)
from .kernels import (
    GmmKernelParams,
    Scheme,
    build_kernel_bank,
    clip_variances,
    eigenvalue_brackets,
    make_kernel,
    make_ortho,
    make_ortho_vub,
    make_rand,
    validate_constraints,
)
from .metrics import MetricsReport, evaluate, mmd_squared, moment_errors, sliced_wasserstein2
from .samplers import SamplerConfig, SamplerRun, ddim_gmm_step, ddim_step, ddpm_step, run_sampler
from .schedule import Schedule, build_linear_schedule, select_substeps, sigma_for_step, sigmas
from .verification import (
    closed_form_marginals,
    elbo_bound,
    elbo_weights,
    exact_denoising_posterior,
    monte_carlo_marginals,
)

__version__ = "0.1.0"

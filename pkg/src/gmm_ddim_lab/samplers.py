"""Reverse-time samplers: DDPM ancestral, DDIM and DDIM with GMM kernels.

Random streams
--------------
Chains are grouped in fixed-size blocks. Block ``b`` of a run with master
seed ``m`` owns two independent generators spawned from
``SeedSequence(m, spawn_key=(b,))``: a *component* stream (mixture-component
draws) and a *gaussian* stream (``x_T`` and every step's noise). DDIM never
touches the component stream, so a GMM kernel with zero offsets reproduces
DDIM bit for bit. Blocks are the unit of parallelism, which makes threaded
runs identical to serial ones.
"""

from __future__ import annotations

import concurrent.futures as cf
from dataclasses import dataclass, field

import numpy as np

from .denoiser import GuidanceConfig, GuidedDenoiser
from .errors import ParameterError, VarianceOverflowError
from .kernels import GmmKernelParams, Scheme, bank_at, clip_variances
from .schedule import Schedule, select_substeps, sigma_for_step

__all__ = [
    "SamplerConfig",
    "SamplerRun",
    "BlockStreams",
    "block_streams",
    "predict_x0",
    "ddpm_step",
    "ddim_step",
    "ddim_gmm_step",
    "run_sampler",
    "DEFAULT_BLOCK_SIZE",
]

KINDS = ("ddpm", "ddim", "ddim_gmm")
DEFAULT_BLOCK_SIZE = 4096


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "ddim"
    eta: float = 0.0
    steps: int = 10
    kernel_bank: tuple | None = None
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    record_trajectory: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"sampler kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.eta <= 1.0:
            raise ParameterError(f"eta must lie in [0, 1], got {self.eta!r}")
        if (self.kernel_bank is not None) != (self.kind == "ddim_gmm"):
            raise ParameterError("kernel_bank is required for ddim_gmm and only for it")
        if self.kernel_bank is not None and len(self.kernel_bank) not in (1, self.steps):
            raise ParameterError(f"kernel bank must have length 1 or {self.steps}")


@dataclass
class SamplerRun:
    config: SamplerConfig
    master_seed: int
    chains: int
    finals: np.ndarray
    trajectories: np.ndarray | None = None
    clip_events: int = 0


@dataclass
class BlockStreams:
    component: np.random.Generator
    gaussian: np.random.Generator


def block_streams(master_seed: int, block: int) -> BlockStreams:
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(block),))
    comp, gauss = ss.spawn(2)
    return BlockStreams(np.random.Generator(np.random.Philox(comp)), np.random.Generator(np.random.Philox(gauss)))


def predict_x0(x_t, eps_hat, alpha_t: float) -> np.ndarray:
    return (x_t - np.sqrt(1.0 - alpha_t) * eps_hat) / np.sqrt(alpha_t)


def _draw(rng, shape):
    return rng.standard_normal(shape) if rng is not None else np.zeros(shape)


def ddpm_step(x_t, t: int, eps_hat, schedule: Schedule, rng=None) -> np.ndarray:
    """Ancestral step ``t -> t - 1`` on the full schedule (no noise at t = 1)."""
    x_t = np.asarray(x_t, dtype=float)
    beta, a_t, a_prev = schedule.beta(t), schedule.alpha(t), schedule.alpha(t - 1)
    mean = (x_t - beta / np.sqrt(1.0 - a_t) * eps_hat) / np.sqrt(1.0 - beta)
    z = _draw(rng, x_t.shape)
    if t == 1:
        return mean
    return mean + np.sqrt((1.0 - a_prev) / (1.0 - a_t) * beta) * z


def _ddim_mean(x_t, eps_hat, a_t, a_prev, sigma):
    room = 1.0 - a_prev - sigma * sigma
    if room < 0:
        if room > -1e-12:
            room = 0.0
        else:
            raise VarianceOverflowError(f"sigma^2={sigma * sigma} exceeds 1 - alpha_prev={1.0 - a_prev}")
    x0 = predict_x0(x_t, eps_hat, a_t)
    # (x_t - sqrt(a_t) x0) / sqrt(1 - a_t) equals eps_hat algebraically
    return np.sqrt(a_prev) * x0 + np.sqrt(room) * (x_t - np.sqrt(a_t) * x0) / np.sqrt(1.0 - a_t)


def ddim_step(x_t, t: int, t_prev: int, eps_hat, sigma: float, schedule: Schedule, rng=None) -> np.ndarray:
    """Generalised DDIM step ``t -> t_prev`` with reverse std ``sigma``."""
    x_t = np.asarray(x_t, dtype=float)
    a_t, a_prev = schedule.alpha(t), schedule.alpha(t_prev)
    mean = _ddim_mean(x_t, eps_hat, a_t, a_prev, sigma)
    return mean + sigma * _draw(rng, x_t.shape)


def _gmm_noise(params: GmmKernelParams, sigma: float, comps, z):
    """Noise with the per-component clipped diagonal covariance."""
    var, _ = clip_variances(sigma * sigma, params)
    off = params.cov_diag_offsets
    # keep std == sigma bitwise wherever nothing is subtracted
    std = np.where(off == 0.0, sigma, np.sqrt(var))
    if params.scheme is not Scheme.ORTHO_VUB:
        return std[comps] * z
    K = params.components
    U = params.basis
    proj = z @ U  # (N, K) coordinates along the basis columns
    return sigma * z + ((std[comps, :K] - sigma) * proj) @ U.T


def ddim_gmm_step(x_t, t: int, t_prev: int, eps_hat, sigma: float, params: GmmKernelParams, schedule: Schedule, rng=None, component_rng=None):
    """DDIM step whose kernel is the mixture ``params``.

    Returns ``(x_prev, components)``. Component indices are drawn from
    ``component_rng`` before any Gaussian noise is drawn from ``rng``.
    """
    x_t = np.atleast_2d(np.asarray(x_t, dtype=float))
    n = x_t.shape[0]
    component_rng = np.random.default_rng(component_rng)
    comps = component_rng.choice(params.components, size=n, p=params.priors)
    a_t, a_prev = schedule.alpha(t), schedule.alpha(t_prev)
    mean = _ddim_mean(x_t, eps_hat, a_t, a_prev, sigma) + params.deltas[comps]
    z = _draw(rng, x_t.shape)
    return mean + _gmm_noise(params, sigma, comps, z), comps


def _run_block(cfg: SamplerConfig, denoiser, schedule: Schedule, n: int, dim: int, streams: BlockStreams):
    x = streams.gaussian.standard_normal((n, dim))
    S = schedule.num_substeps
    traj = np.empty((S, n, dim)) if cfg.record_trajectory else None
    for pos, i in enumerate(range(S - 1, -1, -1)):
        t, t_prev = schedule.step_pair(i)
        eps = denoiser(x, t)
        if cfg.kind == "ddpm":
            x = ddpm_step(x, t, eps, schedule, streams.gaussian)
        else:
            sigma = sigma_for_step(schedule, i, cfg.eta)
            if cfg.kind == "ddim_gmm" and i > 0:
                x, _ = ddim_gmm_step(x, t, t_prev, eps, sigma, bank_at(cfg.kernel_bank, i), schedule, streams.gaussian, streams.component)
            else:
                x = ddim_step(x, t, t_prev, eps, sigma, schedule, streams.gaussian)
        if traj is not None:
            traj[pos] = x
    return x, traj


def run_sampler(config: SamplerConfig, denoiser, schedule: Schedule, chains: int, master_seed: int, *, dim: int | None = None, workers: int = 1, block_size: int = DEFAULT_BLOCK_SIZE) -> SamplerRun:
    """Draw ``chains`` samples with the configured reverse process.

    ``schedule`` supplies betas; the sampling subsequence is rebuilt from
    ``config.steps``. DDPM requires ``steps == T``. The final step into
    ``alpha = 1`` is always a plain Gaussian DDIM step.
    """
    if chains < 0:
        raise ParameterError("chains must be nonnegative")
    dim = dim if dim is not None else denoiser.dim
    sched = select_substeps(schedule, config.steps)
    if config.kind == "ddpm" and sched.num_substeps != sched.total_steps:
        raise ParameterError("DDPM runs the full schedule only (steps must equal T)")
    if sched.num_substeps != config.steps:
        raise ParameterError(f"{config.steps} steps collapse to {sched.num_substeps} distinct sub-steps")
    if config.guidance.mode != "none":
        if isinstance(denoiser, GuidedDenoiser):
            raise ParameterError("config.guidance is applied here; pass the unguided denoiser")
        denoiser = GuidedDenoiser(denoiser, denoiser.dist, sched, config.guidance)

    clip_events = 0
    if config.kind == "ddim_gmm":
        for i in range(1, sched.num_substeps):
            sigma = sigma_for_step(sched, i, config.eta)
            clip_events += clip_variances(sigma * sigma, bank_at(config.kernel_bank, i))[1]

    S = sched.num_substeps
    if chains == 0:
        traj = np.empty((S, 0, dim)) if config.record_trajectory else None
        return SamplerRun(config, int(master_seed), 0, np.empty((0, dim)), traj, clip_events)

    sizes = [min(block_size, chains - s) for s in range(0, chains, block_size)]

    def job(b):
        return _run_block(config, denoiser, sched, sizes[b], dim, block_streams(master_seed, b))

    if workers > 1 and len(sizes) > 1:
        with cf.ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(job, range(len(sizes))))
    else:
        results = [job(b) for b in range(len(sizes))]
    finals = np.concatenate([r[0] for r in results])
    traj = np.concatenate([r[1] for r in results], axis=1) if config.record_trajectory else None
    return SamplerRun(config, int(master_seed), int(chains), finals, traj, clip_events)

"""Forward noise schedule, sampling sub-steps and reverse-kernel variances.

Steps are 1-based throughout: ``betas[t - 1]`` is beta at step ``t`` and
``Schedule.alpha(0)`` is exactly 1 so the last reverse step lands on data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ScheduleOrderError

__all__ = [
    "Schedule",
    "build_linear_schedule",
    "select_substeps",
    "sigma_for_step",
    "sigmas",
]


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Schedule:
    """Discretised forward process plus the sampling subsequence ``tau``.

    Attributes:
        betas: Per-step noise rates, shape ``(T,)``.
        alphas_cum: Cumulative products of ``1 - betas``, shape ``(T,)``.
        tau: Strictly increasing sampling steps drawn from ``1..T``.
    """

    betas: np.ndarray
    alphas_cum: np.ndarray
    tau: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "betas", _frozen(self.betas))
        object.__setattr__(self, "alphas_cum", _frozen(self.alphas_cum))
        object.__setattr__(self, "tau", _frozen(self.tau, dtype=np.int64))
        T = self.betas.shape[0]
        if T < 1 or self.alphas_cum.shape != (T,):
            raise ParameterError("betas and alphas_cum must both have length T >= 1")
        if np.any(self.betas <= 0) or np.any(self.betas >= 1):
            raise ParameterError("betas must lie in (0, 1)")
        tau = self.tau
        if tau.ndim != 1 or tau.size == 0:
            raise ParameterError("tau must be a nonempty 1-d sequence")
        if tau[0] < 1 or tau[-1] > T or np.any(np.diff(tau) <= 0):
            raise ParameterError("tau must be strictly increasing within [1, T]")

    @property
    def total_steps(self) -> int:
        return int(self.betas.shape[0])

    @property
    def num_substeps(self) -> int:
        return int(self.tau.shape[0])

    def alpha(self, t: int) -> float:
        """Cumulative alpha at step ``t``; ``alpha(0) == 1``."""
        t = int(t)
        if t == 0:
            return 1.0
        if not 1 <= t <= self.total_steps:
            raise ParameterError(f"step t={t} outside [0, {self.total_steps}]")
        return float(self.alphas_cum[t - 1])

    def beta(self, t: int) -> float:
        t = int(t)
        if not 1 <= t <= self.total_steps:
            raise ParameterError(f"step t={t} outside [1, {self.total_steps}]")
        return float(self.betas[t - 1])

    def step_pair(self, index: int) -> tuple[int, int]:
        """``(t, t_prev)`` for the reverse step leaving ``tau[index]``.

        ``t_prev`` is 0 (the data end) for ``index == 0``.
        """
        if not 0 <= index < self.num_substeps:
            raise ParameterError(f"tau index {index} outside [0, {self.num_substeps})")
        t = int(self.tau[index])
        t_prev = int(self.tau[index - 1]) if index > 0 else 0
        return t, t_prev

    def with_tau(self, tau) -> "Schedule":
        return Schedule(self.betas, self.alphas_cum, tau)


def build_linear_schedule(total_steps: int, beta_start: float, beta_end: float) -> Schedule:
    """Linear beta schedule with both endpoints included; ``tau`` is ``1..T``."""
    if int(total_steps) != total_steps or total_steps < 1:
        raise ParameterError(f"total_steps must be a positive integer, got {total_steps!r}")
    if not 0 < beta_start < 1:
        raise ParameterError(f"beta_start must lie in (0, 1), got {beta_start!r}")
    if not beta_start <= beta_end < 1:
        raise ParameterError(f"beta_end must lie in [beta_start, 1), got {beta_end!r}")
    total_steps = int(total_steps)
    betas = np.linspace(beta_start, beta_end, total_steps, dtype=float)
    alphas_cum = np.cumprod(1.0 - betas)
    return Schedule(betas, alphas_cum, np.arange(1, total_steps + 1))


def select_substeps(schedule: Schedule, count: int) -> Schedule:
    """Evenly strided subsequence ``1 + floor(i * T / count)``, ``i = 0..count-1``."""
    T = schedule.total_steps
    if int(count) != count or not 1 <= count <= T:
        raise ParameterError(f"count must be an integer in [1, {T}], got {count!r}")
    count = int(count)
    tau = 1 + (np.arange(count, dtype=np.int64) * T) // count
    return schedule.with_tau(np.unique(tau))


def sigma_for_step(schedule: Schedule, step_index_in_tau: int, eta: float) -> float:
    """Reverse-kernel standard deviation for the step leaving ``tau[index]``.

    ``eta`` scales the DDPM posterior standard deviation between the current
    and previous sampling steps. Index 0 targets ``alpha = 1`` and therefore
    always yields 0.
    """
    if not 0.0 <= eta <= 1.0:
        raise ParameterError(f"eta must lie in [0, 1], got {eta!r}")
    t, t_prev = schedule.step_pair(step_index_in_tau)
    a_cur, a_prev = schedule.alpha(t), schedule.alpha(t_prev)
    if a_cur >= a_prev:
        raise ScheduleOrderError(f"alpha({t})={a_cur} is not below alpha({t_prev})={a_prev}")
    var = (1.0 - a_prev) / (1.0 - a_cur) * (1.0 - a_cur / a_prev)
    return float(eta * np.sqrt(var))


def sigmas(schedule: Schedule, eta: float) -> np.ndarray:
    """``sigma_for_step`` for every index of ``tau``."""
    return np.array([sigma_for_step(schedule, i, eta) for i in range(schedule.num_substeps)])

"""Gaussian-mixture reverse-kernel parameters.

A kernel is ``(priors, deltas, Delta)``: mixture priors, mean offsets and
covariance offsets added to the single-Gaussian DDIM kernel. Offsets satisfy

    sum_k pi_k delta_k = 0
    Delta_k = 1 / (K pi_k) * sum_l pi_l delta_l delta_l^T

which keeps the first two moments of every forward marginal equal to the
DDPM ones. ``Delta_k`` is D x D and is only materialised on request; the
sampler works with a per-component diagonal surrogate (``cov_diag_offsets``).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ParameterError

__all__ = [
    "Scheme",
    "GmmKernelParams",
    "ConstraintReport",
    "make_rand",
    "make_ortho",
    "make_ortho_vub",
    "make_kernel",
    "clip_variances",
    "build_kernel_bank",
    "bank_at",
    "eigenvalue_brackets",
    "validate_constraints",
]


class Scheme(str, Enum):
    RAND = "rand"
    ORTHO = "ortho"
    ORTHO_VUB = "ortho_vub"


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GmmKernelParams:
    """One step's mixture parameters.

    Attributes:
        priors: ``(K,)`` mixture weights.
        deltas: ``(K, D)`` mean offsets.
        scheme: How the offsets were built.
        scale: Offset scale ``s``.
        cov_diag_offsets: ``(K, D)`` variance reductions used when sampling.
            Standard basis for RAND/ORTHO. For ORTHO_VUB the coordinates refer
            to the frame whose first K axes are the columns of ``basis``.
        shared_across_steps: Whether one set is reused at every step.
        basis: ``(D, K)`` orthonormal columns for ORTHO/ORTHO_VUB, else None.
    """

    priors: np.ndarray
    deltas: np.ndarray
    scheme: Scheme
    scale: float
    cov_diag_offsets: np.ndarray
    shared_across_steps: bool = False
    basis: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "priors", _frozen(self.priors))
        object.__setattr__(self, "deltas", _frozen(np.atleast_2d(self.deltas)))
        object.__setattr__(self, "cov_diag_offsets", _frozen(np.atleast_2d(self.cov_diag_offsets)))
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.basis is not None:
            object.__setattr__(self, "basis", _frozen(self.basis))
        K, D = self.deltas.shape
        if self.priors.shape != (K,) or self.cov_diag_offsets.shape != (K, D):
            raise ParameterError("priors, deltas and cov_diag_offsets disagree on K or D")

    @property
    def components(self) -> int:
        return int(self.deltas.shape[0])

    @property
    def dim(self) -> int:
        return int(self.deltas.shape[1])

    def full_cov_offsets(self) -> np.ndarray:
        """Materialised ``Delta_k`` for every component, shape ``(K, D, D)``."""
        pi, d = self.priors, self.deltas
        shared = np.einsum("l,li,lj->ij", pi, d, d)
        return shared[None] / (self.components * pi)[:, None, None]


_NORM_ITERS = 5000
_NORM_TOL = 1e-12


def _check_priors(priors, K):
    if priors is None:
        return np.full(K, 1.0 / K)
    pi = np.asarray(priors, dtype=float)
    if pi.shape != (K,):
        raise ParameterError(f"priors must have length K={K}")
    if np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-12:
        raise ParameterError("priors must be positive and sum to 1")
    return pi


def _check_shape(dimension, components, scale):
    if components < 1 or components >= dimension:
        raise ParameterError(f"need 1 <= K < D, got K={components}, D={dimension}")
    if scale < 0:
        raise ParameterError("scale must be nonnegative")


def _eq11_diagonal(pi, deltas):
    shared = pi @ (deltas * deltas)
    return shared[None, :] / (len(pi) * pi)[:, None]


def _centred_equal_norm(C, pi, scale, max_iter=_NORM_ITERS):
    """Columns of norm ``scale`` whose ``pi``-weighted mean is exactly zero.

    Normalising centred columns once moves their weighted mean off zero
    unless all norms happen to agree, so centring and normalising alternate
    until both hold. The last operation is always a centring. When equal
    norms are unreachable (e.g. K = 2 with unequal priors) the columns get
    one common factor making their pi-weighted RMS norm equal ``scale``.
    """
    if scale == 0:
        return np.zeros_like(C)
    for _ in range(max_iter):
        C = C * (scale / np.linalg.norm(C, axis=0))
        C = C - (C @ pi)[:, None]
        if np.abs(np.linalg.norm(C, axis=0) - scale).max() <= _NORM_TOL * scale:
            return C
    rms = np.sqrt(pi @ np.sum(C * C, axis=0))
    return C * (scale / rms)


def make_rand(dimension: int, components: int, priors=None, scale: float = 1.0, rng=None) -> GmmKernelParams:
    """Random offsets: Gaussian columns, prior-weighted centring, norm ``scale``.

    See ``_centred_equal_norm`` for how both the zero weighted mean and the
    common norm are enforced.

    With ``K == 1`` the centred column is identically zero and the kernel is
    plain DDIM.
    """
    _check_shape(dimension, components, scale)
    pi = _check_priors(priors, components)
    rng = np.random.default_rng(rng)
    if components == 1:
        deltas = np.zeros((1, dimension))
    else:
        for attempt in range(2):
            O = rng.standard_normal((dimension, components))
            C = O - (O @ pi)[:, None]
            norms = np.linalg.norm(C, axis=0)
            if np.all(norms > 0):
                break
        else:
            raise ParameterError("degenerate offset draw: a centred column vanished twice")
        deltas = _centred_equal_norm(C, pi, scale).T
    return GmmKernelParams(pi, deltas, Scheme.RAND, float(scale), _eq11_diagonal(pi, deltas))


def _orthonormal_columns(rng, dimension, components):
    for attempt in range(2):
        O = rng.standard_normal((dimension, components))
        Q, R = np.linalg.qr(O)
        if np.min(np.abs(np.diag(R))) > 1e-10 * max(1.0, np.abs(R).max()):
            return Q
    raise ParameterError("random offset matrix is rank deficient after a redraw")


def make_ortho(dimension: int, components: int, priors=None, scale: float = 1.0, rng=None) -> GmmKernelParams:
    """Orthonormalised offsets ``delta_k = s (u_k - ubar)``.

    ``u_k`` are the columns of the reduced QR factor of a Gaussian D x K
    matrix, which spans the same subspace as its leading singular vectors.
    """
    _check_shape(dimension, components, scale)
    pi = _check_priors(priors, components)
    U = _orthonormal_columns(np.random.default_rng(rng), dimension, components)
    deltas = (scale * (U - (U @ pi)[:, None])).T
    return GmmKernelParams(pi, deltas, Scheme.ORTHO, float(scale), _eq11_diagonal(pi, deltas), basis=U)


def make_ortho_vub(dimension: int, components: int, priors=None, scale: float = 1.0, rng=None) -> GmmKernelParams:
    """ORTHO offsets with eigenvalue upper bounds as variance reductions.

    Component k reduces the variance along basis column j by
    ``s^2 / (K pi_k) * pi_j``; the orthogonal complement keeps full variance.
    """
    base = make_ortho(dimension, components, priors, scale, rng)
    pi, K = base.priors, base.components
    offsets = np.zeros((K, dimension))
    # with one component the offset and Delta vanish, so the exact value 0 replaces the loose bound s^2
    if K > 1:
        offsets[:, :K] = (scale**2 / (K * pi))[:, None] * pi[None, :]
    return GmmKernelParams(pi, base.deltas, Scheme.ORTHO_VUB, float(scale), offsets, basis=base.basis)


_MAKERS = {Scheme.RAND: make_rand, Scheme.ORTHO: make_ortho, Scheme.ORTHO_VUB: make_ortho_vub}


def make_kernel(scheme, dimension, components, priors=None, scale=1.0, rng=None) -> GmmKernelParams:
    return _MAKERS[Scheme(scheme)](dimension, components, priors, scale, rng)


def clip_variances(sigma_sq: float, params: GmmKernelParams) -> tuple[np.ndarray, int]:
    """Per-component variances ``max(0, sigma^2 - offset)`` and the clip count.

    Coordinates are in the same frame as ``params.cov_diag_offsets``.
    """
    if sigma_sq < 0:
        raise ParameterError("sigma_sq must be nonnegative")
    raw = sigma_sq - params.cov_diag_offsets
    return np.maximum(raw, 0.0), int(np.count_nonzero(raw < 0))


def build_kernel_bank(scheme, n_steps: int, share: bool, dimension: int, components: int, priors=None, scale: float = 1.0, rng=None) -> tuple[GmmKernelParams, ...]:
    """Parameters for every sampling step, or a single shared set.

    Entry ``i`` drives the reverse step leaving ``tau[i]``. Entry 0 is never
    used by the samplers, whose final step is plain Gaussian, but keeps the
    indexing aligned with ``tau``.
    """
    if n_steps < 1:
        raise ParameterError("n_steps must be positive")
    rng = np.random.default_rng(rng)
    if share:
        p = make_kernel(scheme, dimension, components, priors, scale, rng)
        return (GmmKernelParams(p.priors, p.deltas, p.scheme, p.scale, p.cov_diag_offsets, True, p.basis),)
    return tuple(make_kernel(scheme, dimension, components, priors, scale, rng) for _ in range(n_steps))


def bank_at(bank, index: int) -> GmmKernelParams:
    return bank[0] if len(bank) == 1 else bank[index]


def eigenvalue_brackets(priors, scale: float, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Interlacing brackets for the K leading eigenvalues of ``Delta_k``.

    Returned in ascending eigenvalue order. The rank-one interlacing argument
    needs the priors in ascending order, so they are sorted here.
    """
    pi = np.asarray(priors, dtype=float)
    K = pi.size
    c = scale**2 / (K * pi[k])
    p = np.sort(pi)
    upper = c * p
    lower = np.empty(K)
    lower[0] = c * (p[0] - np.sum(pi**2))
    lower[1:] = c * p[:-1]
    return lower, upper


@dataclass
class ConstraintReport:
    mean_residual: np.ndarray
    max_mean_residual: float
    max_cov_residual: float
    max_diag_residual: float
    bound_violations: int
    max_bound_excess: float
    tol: float = 1e-8

    @property
    def passed(self) -> bool:
        return (
            self.max_mean_residual < self.tol
            and self.max_cov_residual < self.tol
            and self.max_diag_residual < self.tol
            and self.bound_violations == 0
        )


def validate_constraints(params: GmmKernelParams, tol: float = 1e-8) -> ConstraintReport:
    """Check the moment constraints against an explicit materialisation.

    Reports the weighted mean of the offsets, the residual of
    ``sum_k pi_k Delta_k = sum_k pi_k delta_k delta_k^T`` and of Eq. 11 for
    each k (summed term by term), the mismatch between the stored diagonal
    surrogate and ``diag(Delta_k)`` (RAND/ORTHO), and eigenvalue-bracket
    violations (ORTHO/ORTHO_VUB; VUB additionally checks that its stored
    reductions dominate the exact eigenvalues).
    """
    pi, d = params.priors, params.deltas
    K, D = d.shape
    mean_res = np.abs(pi @ d)

    Delta = params.full_cov_offsets()
    outer = np.zeros((D, D))
    for l in range(K):
        outer += pi[l] * np.outer(d[l], d[l])
    cov_res = 0.0
    for k in range(K):
        cov_res = max(cov_res, np.abs(K * pi[k] * Delta[k] - outer).max())
    weighted = sum(pi[k] * Delta[k] for k in range(K))
    cov_res = max(cov_res, np.abs(weighted - outer).max())

    diag_res = 0.0
    if params.scheme in (Scheme.RAND, Scheme.ORTHO):
        diag_res = float(np.abs(np.diagonal(Delta, axis1=1, axis2=2) - params.cov_diag_offsets).max())

    violations, excess = 0, 0.0
    if params.scheme in (Scheme.ORTHO, Scheme.ORTHO_VUB) and K > 1:
        for k in range(K):
            lam = np.linalg.eigvalsh(Delta[k])[-K:]
            lo, hi = eigenvalue_brackets(pi, params.scale, k)
            e = np.maximum(lo - lam, lam - hi)
            if params.scheme is Scheme.ORTHO_VUB:
                vub = np.sort(params.cov_diag_offsets[k, :K])
                e = np.maximum(e, lam - vub)
            violations += int(np.count_nonzero(e > tol))
            excess = max(excess, float(e.max()))
    return ConstraintReport(mean_res, float(mean_res.max()), float(cov_res), diag_res, violations, excess, tol)

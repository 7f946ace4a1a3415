"""Distribution diagnostics: moments, Gaussian W2, spectral error and chain oracles."""

from __future__ import annotations
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from .grid import Field, GridLike, GridShape, as_array
from .precondition import Preconditioner, SkewOperator, operator_matrix
from .targets import GaussianTarget, GrfTarget, ScoreTarget

logger = logging.getLogger(__name__)

_AXES = (-2, -1)

DENSE_MOMENT_LIMIT = 4096
# Grids with more pixels per channel default to spectral moments
SPECTRAL_DEFAULT_PIXELS = 16 * 16
PSD_TOLERANCE = 1e-10

MODES = ("dense", "spectral")

Samples = Union[np.ndarray, Sequence[GridLike]]


@dataclass(frozen=True, eq=False)
class MomentSummary:
    """Mean plus either a dense covariance or a centered power spectrum."""

    mean: Field
    covariance: Union[np.ndarray, Field]
    n_samples: int

    def __post_init__(self) -> None:
        if isinstance(self.covariance, Field):
            if np.any(as_array(self.covariance) < 0):
                raise ValueError("power spectrum must be non-negative")
            return
        cov = np.asarray(self.covariance, dtype=np.float64)
        n = self.mean.shape.size
        if cov.shape != (n, n):
            raise ValueError(f"covariance must be {n}x{n}, got {cov.shape}")
        scale = max(1.0, float(np.max(np.abs(cov)))) if cov.size else 1.0
        if cov.size and float(np.max(np.abs(cov - cov.T))) > 1e-8 * scale:
            raise ValueError("covariance is not symmetric")
        object.__setattr__(self, "covariance", cov)

    @property
    def mode(self) -> str:
        return "spectral" if isinstance(self.covariance, Field) else "dense"


def _stack(samples: Samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        stack = np.asarray(samples, dtype=np.float64)
    else:
        if len(samples) == 0:
            raise ValueError("insufficient samples: got 0, need at least 2")
        stack = np.stack([as_array(s) for s in samples]).astype(np.float64)
    if stack.ndim != 4:
        raise ValueError(f"samples must stack to (N, C, H, W), got {stack.shape}")
    if stack.shape[0] < 2:
        raise ValueError(f"insufficient samples: got {stack.shape[0]}, need at least 2")
    return stack


def default_mode(shape: GridShape, target: Optional[ScoreTarget] = None) -> str:
    """Spectral for GRF-sized grids above 16x16 pixels, dense for everything else.

    Only GRF targets have a per-frequency covariance, so any other target
    resolves to dense regardless of the grid size.
    """
    if target is not None and not isinstance(target, GrfTarget):
        return "dense"
    return "spectral" if shape.height * shape.width > SPECTRAL_DEFAULT_PIXELS else "dense"


def mean_power(stack: np.ndarray) -> np.ndarray:
    """Per-frequency mean of |F x|²/(H·W), unshifted layout."""
    spectra = np.fft.fft2(stack, axes=_AXES)
    power = spectra.real**2 + spectra.imag**2
    return power.mean(axis=0) / (stack.shape[-2] * stack.shape[-1])


def empirical_moments(samples: Samples, mode: Optional[str] = None) -> MomentSummary:
    """Unbiased sample mean and covariance (dense), or covariance per frequency (spectral).

    The spectral covariance is the mean power of the centered samples, so
    the mean enters a W2 distance only through the shift term.
    """
    stack = _stack(samples)
    count = stack.shape[0]
    shape = GridShape.of(stack)
    mode = mode or default_mode(shape)
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    mean = Field(stack.mean(axis=0))

    if mode == "spectral":
        power = mean_power(stack - mean.data) * (count / (count - 1))
        return MomentSummary(mean, Field(np.fft.fftshift(power, axes=_AXES)), count)

    if shape.size > DENSE_MOMENT_LIMIT:
        raise ValueError(f"dense moments are limited to n <= {DENSE_MOMENT_LIMIT}, got {shape.size}")
    centered = stack.reshape(count, -1) - mean.flat
    cov = centered.T @ centered / (count - 1)
    return MomentSummary(mean, 0.5 * (cov + cov.T), count)


def exact_summary(target: ScoreTarget) -> MomentSummary:
    mean, cov = target.moments()
    return MomentSummary(mean, cov, 0)


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    """Symmetric square root with eigenvalues clamped at 0."""
    values, vectors = scipy.linalg.eigh(0.5 * (matrix + matrix.T))
    floor = -PSD_TOLERANCE * max(1.0, float(np.max(np.abs(values))))
    if values.min() < floor:
        raise ValueError(f"covariance is not positive semi-definite (eigenvalue {values.min():.3e})")
    values = np.clip(values, 0.0, None)
    return (vectors * np.sqrt(values)) @ vectors.T


def _spectrum_to_dense(mean: Field, spectrum: Field) -> np.ndarray:
    power = np.fft.ifftshift(as_array(spectrum), axes=_AXES)

    def apply(x):
        return np.real(np.fft.ifft2(np.fft.fft2(x, axes=_AXES) * power, axes=_AXES))

    cov = operator_matrix(apply, mean.shape)
    return 0.5 * (cov + cov.T)


MomentsLike = Union[MomentSummary, Tuple[Field, Union[np.ndarray, Field]]]


def _summary(m: MomentsLike) -> MomentSummary:
    if isinstance(m, MomentSummary):
        return m
    mean, cov = m
    return MomentSummary(mean if isinstance(mean, Field) else Field(mean), cov, 0)


def gaussian_w2(m1: MomentsLike, m2: MomentsLike) -> float:
    """Bures-Wasserstein distance between N(μ₁, Σ₁) and N(μ₂, Σ₂)."""
    a, b = _summary(m1), _summary(m2)
    if a.mean.shape != b.mean.shape:
        raise ValueError(f"shape mismatch: {a.mean.shape} vs {b.mean.shape}")
    shift = float(np.sum((a.mean.flat - b.mean.flat) ** 2))

    if a.mode == "spectral" and b.mode == "spectral":
        root_gap = np.sqrt(as_array(a.covariance)) - np.sqrt(as_array(b.covariance))
        return float(np.sqrt(shift + np.sum(root_gap**2)))

    cov_a = a.covariance if a.mode == "dense" else _spectrum_to_dense(a.mean, a.covariance)
    cov_b = b.covariance if b.mode == "dense" else _spectrum_to_dense(b.mean, b.covariance)
    root_b = _psd_sqrt(cov_b)
    cross = _psd_sqrt(root_b @ cov_a @ root_b)
    # validates Σ₁ as well
    _psd_sqrt(cov_a)
    bures = float(np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(cross))
    return float(np.sqrt(max(shift + bures, 0.0)))


def condition_number(target: ScoreTarget) -> float:
    """λ_max/λ_min of the target covariance."""
    if isinstance(target, GrfTarget):
        power = target.power_unshifted
        return float(power.max() / power.min())
    if isinstance(target, GaussianTarget):
        values = target.eigenvalues()
        return float(values.max() / values.min())
    raise ValueError(f"condition number needs a Gaussian or GRF target, got {type(target).__name__}")


def spectral_error(samples: Samples, target: GrfTarget) -> float:
    """‖P̂ − P‖₂ / ‖P‖₂ between empirical mean power and the target spectrum."""
    stack = _stack(samples)
    if stack.shape[1:] != target.shape.as_tuple():
        raise ValueError(f"sample shape {stack.shape[1:]} does not match target {target.shape}")
    power = target.power_unshifted
    return float(np.linalg.norm(mean_power(stack) - power) / np.linalg.norm(power))


def relative_frobenius(a: np.ndarray, b: np.ndarray) -> float:
    """‖a − b‖_F / ‖b‖_F."""
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(b))


def mean_standard_error_ok(
    estimate: Field, oracle: MomentSummary, n_samples: int, tolerance: float = 5.0
) -> bool:
    """True if every mean coordinate lies within ``tolerance`` standard errors."""
    if oracle.mode == "spectral":
        variance = np.full(oracle.mean.shape.size, float(np.mean(as_array(oracle.covariance))))
    else:
        variance = np.diag(oracle.covariance)
    se = np.sqrt(np.clip(variance, 0.0, None) / n_samples)
    gap = np.abs(estimate.flat - oracle.mean.flat)
    return bool(np.all(gap <= tolerance * se + 1e-12))


def discrete_stationary_moments(
    target: GaussianTarget,
    eps: float,
    preconditioner: Optional[Preconditioner] = None,
    skew: Optional[SkewOperator] = None,
    omega: float = 0.0,
    drift_mode: str = "score",
) -> MomentSummary:
    """Exact stationary law of the discretized chain on a Gaussian target.

    The update is linear, x' = G x + c + ε N z, so the stationary
    covariance solves the discrete Lyapunov equation C = G C Gᵀ + ε² N Nᵀ.
    """
    if not isinstance(target, GaussianTarget):
        raise ValueError("the stationary oracle needs a GaussianTarget")
    shape = target.shape
    n = shape.size
    identity = np.eye(n)
    if preconditioner is not None and not preconditioner.is_identity:
        drift = operator_matrix(preconditioner.drift, shape)
        noise = operator_matrix(preconditioner.inverse, shape)
    else:
        drift, noise = identity, identity
    gain = drift
    if skew is not None and omega:
        gain = drift + omega * operator_matrix(skew, shape)

    half = eps**2 / 2
    pull = half * gain @ target.precision
    if drift_mode == "literal":
        g = drift - pull
        mean = np.linalg.solve(identity - g, pull @ target.mean.flat)
    elif drift_mode == "score":
        g = identity - pull
        mean = target.mean.flat
    else:
        raise ValueError(f"unknown drift_mode {drift_mode!r}")

    radius = float(np.max(np.abs(np.linalg.eigvals(g))))
    if radius >= 1.0:
        raise ValueError(f"chain is not stable at eps={eps}: spectral radius {radius:.4f} >= 1")
    cov = scipy.linalg.solve_discrete_lyapunov(g, eps**2 * noise @ noise.T)
    logger.info("stationary oracle: n=%d eps=%g spectral radius %.4f", n, eps, radius)
    return MomentSummary(Field.from_flat(shape, mean), 0.5 * (cov + cov.T), 0)


def checkpoint_metrics(states: np.ndarray, target: ScoreTarget, mode: Optional[str] = None) -> Dict[str, Optional[float]]:
    """w2, spectral_error and mean_err of a chain population against the target."""
    stack = _stack(states)
    shape = GridShape.of(stack)
    mode = mode or default_mode(shape, target)
    reference_mean, reference_cov = target.moments()
    if isinstance(target, GrfTarget) and mode == "dense":
        reference_cov = target.dense_covariance()
    elif mode == "spectral" and not isinstance(reference_cov, Field):
        raise ValueError("spectral metrics need a GRF target; use metric_mode = dense")

    summary = empirical_moments(stack, mode)
    gap = summary.mean.flat - reference_mean.flat
    return {
        "w2": gaussian_w2(summary, (reference_mean, reference_cov)),
        "spectral_error": spectral_error(stack, target) if isinstance(target, GrfTarget) else None,
        "mean_err": float(np.sqrt(np.mean(gap**2))),
    }

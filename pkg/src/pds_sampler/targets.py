"""Analytic target distributions with closed-form scores, exact samplers and moments.

These stand in for a trained score network: each target exposes
``score(x) = ∇ log p(x)`` on grids (batched along leading axes), an exact
sampler, and its mean and covariance. Log densities drop the 2π constant.
"""

from __future__ import annotations
import abc
import logging
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg
from scipy.special import logsumexp

from .filters import centered_distance_sq
from .grid import Field, GridLike, GridShape, as_array, like
from .precondition import DENSE_LIMIT, operator_matrix
from .spectral import is_hermitian_symmetric, uncenter

logger = logging.getLogger(__name__)

_AXES = (-2, -1)

Covariance = Union[np.ndarray, Field]


class ScoreTarget(abc.ABC):
    """Target density p over C×H×W grids."""

    shape: GridShape

    @abc.abstractmethod
    def score(self, x: np.ndarray) -> np.ndarray:
        """∇ log p at x; x may carry leading batch axes."""

    @abc.abstractmethod
    def log_density(self, x: np.ndarray) -> np.ndarray:
        """log p(x) up to an additive constant, one value per grid in the batch."""

    @abc.abstractmethod
    def sample(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        """Exact draw(s): shape (C, H, W) or (size, C, H, W)."""

    @abc.abstractmethod
    def moments(self) -> Tuple[Field, Covariance]:
        """Mean field and covariance (dense matrix, or a spectrum Field for GRFs)."""

    @abc.abstractmethod
    def perturbed(self, sigma: float) -> "ScoreTarget":
        """This target convolved with N(0, sigma² I)."""

    def _check(self, x) -> np.ndarray:
        values = np.asarray(x, dtype=np.float64)
        if values.shape[-3:] != self.shape.as_tuple():
            raise ValueError(f"grid shape {values.shape[-3:]} does not match target shape {self.shape}")
        return values

    def _flat(self, x) -> np.ndarray:
        values = self._check(x)
        return values.reshape(values.shape[:-3] + (self.shape.size,))

    def _grid(self, flat: np.ndarray) -> np.ndarray:
        return flat.reshape(flat.shape[:-1] + self.shape.as_tuple())

    def _draw_noise(self, rng: np.random.Generator, size: Optional[int], width: Tuple[int, ...]):
        return rng.standard_normal(width if size is None else (size,) + width)


def _check_sigma(sigma: float) -> float:
    if not sigma >= 0:
        raise ValueError(f"perturbation scale must be >= 0, got {sigma}")
    return float(sigma)


class GaussianTarget(ScoreTarget):
    """N(μ, Σ) with a dense covariance over the flattened grid (n <= 1024)."""

    def __init__(self, mean: Field, covariance: np.ndarray):
        mean_values = as_array(mean)
        self.shape = GridShape.of(mean_values)
        n = self.shape.size
        if n > DENSE_LIMIT:
            raise ValueError(f"dense Gaussian targets are limited to n <= {DENSE_LIMIT}, got {n}")
        cov = np.array(covariance, dtype=np.float64, copy=True)
        if cov.shape != (n, n):
            raise ValueError(f"covariance must be {n}x{n} for a {self.shape} grid, got {cov.shape}")
        asymmetry = float(np.max(np.abs(cov - cov.T)))
        if asymmetry > 1e-12 * max(1.0, float(np.max(np.abs(cov)))):
            raise ValueError(f"covariance is not symmetric (max |Σ - Σᵀ| = {asymmetry:.3e})")
        try:
            chol = scipy.linalg.cholesky(cov, lower=True)
        except np.linalg.LinAlgError as e:
            raise ValueError(f"covariance is not positive definite: {e}") from e

        precision = scipy.linalg.cho_solve((chol, True), np.eye(n))
        self.mean = mean if isinstance(mean, Field) else Field(mean_values)
        self._mu = self.mean.flat
        self.covariance = cov
        self.cholesky = chol
        self.precision = 0.5 * (precision + precision.T)
        self._log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
        for array in (self.covariance, self.cholesky, self.precision):
            array.setflags(write=False)

    @classmethod
    def standard(cls, shape: GridShape) -> "GaussianTarget":
        return cls(Field.zeros(shape), np.eye(shape.size))

    @classmethod
    def diagonal(cls, shape: GridShape, variances, mean: Optional[Field] = None) -> "GaussianTarget":
        variances = np.broadcast_to(np.asarray(variances, dtype=np.float64), (shape.size,))
        return cls(mean if mean is not None else Field.zeros(shape), np.diag(variances))

    def score(self, x) -> np.ndarray:
        diff = self._flat(x) - self._mu
        return self._grid(-diff @ self.precision)

    def log_density(self, x) -> np.ndarray:
        diff = self._flat(x) - self._mu
        quad = np.einsum("...i,...i->...", diff @ self.precision, diff)
        return -0.5 * quad - 0.5 * self._log_det

    def sample(self, rng, size=None) -> np.ndarray:
        z = self._draw_noise(rng, size, (self.shape.size,))
        return self._grid(self._mu + z @ self.cholesky.T)

    def moments(self) -> Tuple[Field, np.ndarray]:
        return self.mean, self.covariance

    def perturbed(self, sigma: float) -> "GaussianTarget":
        sigma = _check_sigma(sigma)
        if sigma == 0.0:
            return self
        return GaussianTarget(self.mean, self.covariance + sigma**2 * np.eye(self.shape.size))

    def eigenvalues(self) -> np.ndarray:
        return scipy.linalg.eigvalsh(self.covariance)

    def dense_covariance(self) -> np.ndarray:
        return self.covariance


class GrfTarget(ScoreTarget):
    """Zero-mean Gaussian random field, diagonal in the DFT basis.

    ``power_spectrum`` holds the per-frequency variance in centered layout:
    a white N(0, I) field has spectrum 1 everywhere, and the covariance
    eigenvalues are exactly the spectrum entries.
    """

    def __init__(self, power_spectrum: Field):
        values = as_array(power_spectrum)
        self.shape = GridShape.of(values)
        bad = np.flatnonzero(~(values > 0))
        if bad.size:
            raise ValueError(f"power spectrum must be strictly positive (flat index {int(bad[0])})")
        unshifted = np.ascontiguousarray(uncenter(values), dtype=np.float64)
        if not is_hermitian_symmetric(unshifted):
            raise ValueError("power spectrum must be symmetric under frequency negation")
        self.power_spectrum = power_spectrum if isinstance(power_spectrum, Field) else Field(values)
        self._power = unshifted
        self._amplitude = np.sqrt(unshifted)
        for array in (self._power, self._amplitude):
            array.setflags(write=False)

    @classmethod
    def power_law(
        cls,
        shape: GridShape,
        condition_number: Optional[float] = None,
        kappa: Optional[float] = None,
        exponent: float = 1.0,
    ) -> "GrfTarget":
        """P = 1/(1 + κ·d²)^p with d the distance from the centered DC bin.

        With ``condition_number`` given, κ is chosen so that max(P)/min(P)
        equals it (the maximum, 1, sits at DC).
        """
        if exponent <= 0:
            raise ValueError(f"exponent must be > 0, got {exponent}")
        dist_sq = centered_distance_sq(shape).astype(np.float64)
        if condition_number is not None:
            if condition_number < 1:
                raise ValueError(f"condition number must be >= 1, got {condition_number}")
            if dist_sq.max() == 0:
                kappa = 0.0
            else:
                kappa = (condition_number ** (1.0 / exponent) - 1.0) / dist_sq.max()
        elif kappa is None:
            kappa = 1.0
        if kappa < 0:
            raise ValueError(f"kappa must be >= 0, got {kappa}")
        spectrum = (1.0 + kappa * dist_sq) ** (-exponent)
        logger.info("power-law GRF %s: kappa=%.4g exponent=%g", shape, kappa, exponent)
        return cls(Field(np.broadcast_to(spectrum, shape.as_tuple())))

    @property
    def power_unshifted(self) -> np.ndarray:
        return self._power

    def score(self, x) -> np.ndarray:
        spectrum = np.fft.fft2(self._check(x), axes=_AXES)
        return -np.real(np.fft.ifft2(spectrum / self._power, axes=_AXES))

    def log_density(self, x) -> np.ndarray:
        spectrum = np.fft.fft2(self._check(x), axes=_AXES)
        energy = np.abs(spectrum) ** 2 / self._power
        n_bins = self.shape.height * self.shape.width
        quad = np.sum(energy, axis=(-3, -2, -1)) / n_bins
        return -0.5 * quad - 0.5 * float(np.sum(np.log(self._power)))

    def sample(self, rng, size=None) -> np.ndarray:
        # colour white noise in frequency space; F[w] is Hermitian so the result is real
        white = self._draw_noise(rng, size, self.shape.as_tuple())
        spectrum = np.fft.fft2(white, axes=_AXES) * self._amplitude
        return np.real(np.fft.ifft2(spectrum, axes=_AXES))

    def moments(self) -> Tuple[Field, Field]:
        return Field.zeros(self.shape), self.power_spectrum

    def perturbed(self, sigma: float) -> "GrfTarget":
        sigma = _check_sigma(sigma)
        if sigma == 0.0:
            return self
        return GrfTarget(Field(as_array(self.power_spectrum) + sigma**2))

    def eigenvalues(self) -> np.ndarray:
        return np.sort(self._power.reshape(-1))

    def dense_covariance(self) -> np.ndarray:
        def cov_apply(x):
            spectrum = np.fft.fft2(x, axes=_AXES) * self._power
            return np.real(np.fft.ifft2(spectrum, axes=_AXES))

        cov = operator_matrix(cov_apply, self.shape)
        return 0.5 * (cov + cov.T)


class MixtureTarget(ScoreTarget):
    """Mixture of isotropic Gaussians Σᵢ wᵢ N(μᵢ, σᵢ² I)."""

    def __init__(self, weights: Sequence[float], means: Sequence[Field], variances: Sequence[float]):
        weights = np.asarray(weights, dtype=np.float64)
        variances = np.asarray(variances, dtype=np.float64)
        if not (len(weights) == len(means) == len(variances)) or len(weights) == 0:
            raise ValueError("weights, means and variances must be non-empty and of equal length")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must be non-negative and sum to 1, got {weights.tolist()}")
        if np.any(~(variances > 0)):
            raise ValueError(f"component variances must be > 0, got {variances.tolist()}")
        arrays = [as_array(m) for m in means]
        self.shape = GridShape.of(arrays[0])
        for i, array in enumerate(arrays):
            if array.shape != self.shape.as_tuple():
                raise ValueError(f"component {i} mean has shape {array.shape}, expected {self.shape}")

        self.weights = weights
        self.variances = variances
        self.means = [m if isinstance(m, Field) else Field(a) for m, a in zip(means, arrays)]
        self._mu = np.stack([m.flat for m in self.means])
        with np.errstate(divide="ignore"):
            self._log_weights = np.log(weights)
        for array in (self.weights, self.variances, self._mu, self._log_weights):
            array.setflags(write=False)

    def _component_terms(self, x) -> Tuple[np.ndarray, np.ndarray]:
        flat = self._flat(x)
        diff = flat[..., None, :] - self._mu
        n = self.shape.size
        log_terms = (
            self._log_weights
            - 0.5 * np.sum(diff**2, axis=-1) / self.variances
            - 0.5 * n * np.log(self.variances)
        )
        return diff, log_terms

    def score(self, x) -> np.ndarray:
        diff, log_terms = self._component_terms(x)
        responsibilities = np.exp(log_terms - logsumexp(log_terms, axis=-1, keepdims=True))
        pull = -diff / self.variances[:, None]
        return self._grid(np.einsum("...k,...ki->...i", responsibilities, pull))

    def log_density(self, x) -> np.ndarray:
        _, log_terms = self._component_terms(x)
        return logsumexp(log_terms, axis=-1)

    def sample(self, rng, size=None) -> np.ndarray:
        count = 1 if size is None else size
        components = rng.choice(len(self.weights), size=count, p=self.weights)
        z = rng.standard_normal((count, self.shape.size))
        draws = self._mu[components] + np.sqrt(self.variances[components])[:, None] * z
        draws = self._grid(draws)
        return draws[0] if size is None else draws

    def moments(self) -> Tuple[Field, np.ndarray]:
        n = self.shape.size
        if n > DENSE_LIMIT:
            raise ValueError(f"dense mixture moments are limited to n <= {DENSE_LIMIT}, got {n}")
        mean = self.weights @ self._mu
        second = np.zeros((n, n))
        for w, mu, var in zip(self.weights, self._mu, self.variances):
            second += w * (var * np.eye(n) + np.outer(mu, mu))
        return Field.from_flat(self.shape, mean), second - np.outer(mean, mean)

    def perturbed(self, sigma: float) -> "MixtureTarget":
        sigma = _check_sigma(sigma)
        if sigma == 0.0:
            return self
        return MixtureTarget(self.weights, self.means, self.variances + sigma**2)


class ZeroScoreTarget(ScoreTarget):
    """Improper flat density: score ≡ 0, so Langevin steps are pure noise."""

    def __init__(self, shape: GridShape):
        self.shape = shape

    def score(self, x) -> np.ndarray:
        return np.zeros_like(self._check(x))

    def log_density(self, x) -> np.ndarray:
        values = self._check(x)
        return np.zeros(values.shape[:-3])

    def sample(self, rng, size=None) -> np.ndarray:
        raise NotImplementedError("a flat improper target has no exact sampler")

    def moments(self):
        raise NotImplementedError("a flat improper target has no moments")

    def perturbed(self, sigma: float) -> "ZeroScoreTarget":
        return self


# --- functional interface ---------------------------------------------------

def score(target: ScoreTarget, x: GridLike) -> GridLike:
    return like(x, target.score(as_array(x)))


def log_density(target: ScoreTarget, x: GridLike) -> float:
    return float(target.log_density(as_array(x)))


def sample_exact(target: ScoreTarget, rng: np.random.Generator) -> Field:
    return Field(target.sample(rng))


def exact_moments(target: ScoreTarget) -> Tuple[Field, Covariance]:
    return target.moments()


def _shape_from(config: Dict[str, Any]) -> GridShape:
    dims = config.get("shape", [1, 4, 4])
    if len(dims) != 3:
        raise ValueError(f"target.shape must be [C, H, W], got {dims!r}")
    return GridShape(*(int(d) for d in dims))


def _mean_field(shape: GridShape, value) -> Field:
    values = np.asarray(value, dtype=np.float64)
    if values.ndim == 0:
        return Field.full(shape, float(values))
    return Field.from_flat(shape, values)


def target_from_config(config: Dict[str, Any]) -> ScoreTarget:
    """Build a target from the ``target`` section of an experiment config."""
    kind = str(config.get("kind", "gaussian")).lower()
    shape = _shape_from(config)

    if kind == "gaussian":
        mean = _mean_field(shape, config.get("mean", 0.0))
        return GaussianTarget.diagonal(shape, config.get("variances", 1.0), mean=mean)

    if kind == "grf":
        return GrfTarget.power_law(
            shape,
            condition_number=config.get("condition_number"),
            kappa=config.get("kappa"),
            exponent=float(config.get("exponent", 1.0)),
        )

    if kind == "mixture":
        means = config.get("means", [-1.0, 1.0])
        weights = config.get("weights") or [1.0 / len(means)] * len(means)
        variances = config.get("variances", 1.0)
        variances = np.broadcast_to(np.asarray(variances, dtype=np.float64), (len(means),))
        return MixtureTarget(weights, [_mean_field(shape, m) for m in means], variances)

    raise ValueError(f"unknown target kind {kind!r}; expected gaussian, grf or mixture")

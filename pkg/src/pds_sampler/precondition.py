"""The preconditioning operator M[x] = A ⊙ F⁻¹[R ⊙ F[x]] and skew-symmetric drift terms.

All apply functions accept a Field or an array with trailing (C, H, W)
axes; leading axes are treated as a batch of independent grids.
"""

from __future__ import annotations
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, Tuple

import numpy as np

from .grid import Field, GridLike, GridShape, SingularFilterError, as_array, like
from .spectral import is_hermitian_symmetric, reflect_frequencies, roll, uncenter

logger = logging.getLogger(__name__)

_AXES = (-2, -1)

# Grids above this size are not expanded into dense matrices
DENSE_LIMIT = 1024


def _check_positive(name: str, values: np.ndarray) -> None:
    bad = np.flatnonzero(~(values > 0))
    if bad.size:
        index = int(bad[0])
        position = tuple(int(p) for p in np.unravel_index(index, values.shape))
        raise SingularFilterError(
            f"filter {name} must be strictly positive; found {values.flat[index]!r} "
            f"at flat index {index} (position {position})"
        )


class Preconditioner:
    """Space filter A and centered frequency filter R with cached reciprocals.

    Immutable after construction. An all-ones A or R skips the
    corresponding stage entirely, so the identity preconditioner returns
    its input unchanged.
    """

    def __init__(self, a: Field, r: Field):
        a_values, r_values = as_array(a), as_array(r)
        if a_values.shape != r_values.shape:
            raise ValueError(f"A and R shapes differ: {a_values.shape} vs {r_values.shape}")
        _check_positive("A", a_values)
        _check_positive("R", r_values)

        r_freq = np.asarray(uncenter(r_values), dtype=np.float64)
        if not is_hermitian_symmetric(r_freq):
            raise ValueError(
                "frequency filter R must be symmetric under frequency negation "
                "(R(h, w) == R(-h, -w)); use spectral.symmetrize"
            )

        self._a_field = a if isinstance(a, Field) else Field(a_values)
        self._r_field = r if isinstance(r, Field) else Field(r_values)
        self._a_values = self._readonly(a_values)
        self.uniform_space = bool(np.all(a_values == 1.0))
        self.uniform_frequency = bool(np.all(r_values == 1.0))

        self._a_inv = self._readonly(1.0 / a_values)
        self._a_inv_sq = self._readonly(1.0 / a_values**2)
        self._r_freq = self._readonly(r_freq)
        self._r_inv = self._readonly(1.0 / r_freq)
        self._r_inv_sq = self._readonly(1.0 / r_freq**2)

        logger.info(
            "preconditioner %s: A in [%.4g, %.4g]%s, R in [%.4g, %.4g]%s",
            self.shape,
            a_values.min(), a_values.max(), " (uniform)" if self.uniform_space else "",
            r_values.min(), r_values.max(), " (uniform)" if self.uniform_frequency else "",
        )

    @staticmethod
    def _readonly(array: np.ndarray) -> np.ndarray:
        array = np.ascontiguousarray(array, dtype=np.float64)
        array.setflags(write=False)
        return array

    @classmethod
    def identity(cls, shape: GridShape) -> "Preconditioner":
        return cls(Field.ones(shape), Field.ones(shape))

    @property
    def a(self) -> Field:
        return self._a_field

    @property
    def r(self) -> Field:
        """Frequency filter in centered layout."""
        return self._r_field

    @property
    def r_inverse_squared(self) -> np.ndarray:
        """1/R² in unshifted frequency layout."""
        return self._r_inv_sq

    @property
    def shape(self) -> GridShape:
        return self._a_field.shape

    @property
    def is_identity(self) -> bool:
        return self.uniform_space and self.uniform_frequency

    def _frequency(self, x: np.ndarray, gain: np.ndarray) -> np.ndarray:
        if self.uniform_frequency:
            return x
        return np.real(np.fft.ifft2(np.fft.fft2(x, axes=_AXES) * gain, axes=_AXES))

    def _space(self, x: np.ndarray, gain: np.ndarray) -> np.ndarray:
        if self.uniform_space:
            return x
        return x * gain

    def _check(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-3:] != self.shape.as_tuple():
            raise ValueError(f"grid shape {x.shape[-3:]} does not match preconditioner shape {self.shape}")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        """M x = A ⊙ Re F⁻¹[R ⊙ F x]."""
        x = self._check(np.asarray(x))
        return self._space(self._frequency(x, self._r_freq), self._a_values)

    def inverse(self, x: np.ndarray) -> np.ndarray:
        """M⁻¹ x = Re F⁻¹[F[x • A] • R]."""
        x = self._check(np.asarray(x))
        return self._frequency(self._space(x, self._a_inv), self._r_inv)

    def drift(self, d: np.ndarray) -> np.ndarray:
        """F⁻¹[F[F⁻¹[F[d] • R] • A²] • R], the preconditioned drift of the sampling loop."""
        d = self._check(np.asarray(d))
        d = self._frequency(d, self._r_inv)
        d = self._space(d, self._a_inv_sq)
        return self._frequency(d, self._r_inv)


def apply_m(p: Preconditioner, x: GridLike) -> GridLike:
    return like(x, p.forward(as_array(x)))


def apply_m_inverse(p: Preconditioner, x: GridLike) -> GridLike:
    return like(x, p.inverse(as_array(x)))


def apply_drift_precondition(p: Preconditioner, d: GridLike) -> GridLike:
    return like(d, p.drift(as_array(d)))


class SkewKind(str, Enum):
    SHIFT_DIFF = "shift-diff"
    SPECTRAL_SHIFT_DIFF = "spectral-shift-diff"
    SPECTRAL_TRANSPOSE_DIFF = "spectral-transpose-diff"


@dataclass(frozen=True)
class SkewOperator:
    """Skew-symmetric linear map S on grids (⟨x, Sy⟩ = -⟨Sx, y⟩)."""

    kind: SkewKind
    m: int = 0
    n: int = 0

    @classmethod
    def shift_diff(cls, m: int, n: int) -> "SkewOperator":
        return cls(SkewKind.SHIFT_DIFF, int(m), int(n))

    @classmethod
    def spectral_shift_diff(cls, m: int, n: int) -> "SkewOperator":
        return cls(SkewKind.SPECTRAL_SHIFT_DIFF, int(m), int(n))

    @classmethod
    def spectral_transpose_diff(cls) -> "SkewOperator":
        return cls(SkewKind.SPECTRAL_TRANSPOSE_DIFF)

    @classmethod
    def from_name(cls, name: str) -> "SkewOperator":
        key = name.strip().lower()
        if key not in SKEW_PRESETS:
            raise ValueError(f"unknown skew operator {name!r}; choose from {sorted(SKEW_PRESETS)}")
        return SKEW_PRESETS[key]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind is SkewKind.SHIFT_DIFF:
            # Pᵀ_{m,n} is the opposite shift P_{-m,-n}
            return roll(x, self.m, self.n) - roll(x, -self.m, -self.n)
        if self.kind is SkewKind.SPECTRAL_SHIFT_DIFF:
            y = np.fft.ifft2(x, axes=_AXES)
            y = roll(y, self.m, self.n) - roll(y, -self.m, -self.n)
            return np.real(np.fft.fft2(y, axes=_AXES))
        spectrum = np.fft.fft2(x, axes=_AXES)
        return np.real(spectrum - reflect_frequencies(spectrum))

    def describe(self) -> str:
        if self.kind is SkewKind.SPECTRAL_TRANSPOSE_DIFF:
            return "Re[F - Fᵀ]"
        shift = f"P({self.m},{self.n}) - P({self.m},{self.n})ᵀ"
        return shift if self.kind is SkewKind.SHIFT_DIFF else f"Re[F ({shift}) F⁻¹]"


SKEW_PRESETS: Dict[str, SkewOperator] = {
    "s1": SkewOperator.shift_diff(1, 1),
    "s2": SkewOperator.shift_diff(10, 10),
    "s3": SkewOperator.shift_diff(100, 100),
    "s4": SkewOperator.spectral_shift_diff(1, 1),
    "s5": SkewOperator.spectral_shift_diff(10, 10),
    "s6": SkewOperator.spectral_shift_diff(100, 100),
    "spectral-transpose": SkewOperator.spectral_transpose_diff(),
}


def apply_skew(s: SkewOperator, x: GridLike) -> GridLike:
    return like(x, s(as_array(x)))


def operator_matrix(fn: Callable[[np.ndarray], np.ndarray], shape: GridShape) -> np.ndarray:
    """Dense matrix of a linear grid map, built column by column from basis grids."""
    n = shape.size
    if n > DENSE_LIMIT:
        raise ValueError(f"dense operator matrices are limited to n <= {DENSE_LIMIT}, got {n}")
    basis = np.eye(n).reshape((n,) + shape.as_tuple())
    columns = np.asarray(fn(basis), dtype=np.float64).reshape(n, n)
    return columns.T


def drift_deviation(p: Preconditioner) -> Tuple[float, np.ndarray]:
    """Largest entry gap between the drift recipe and M⁻¹M⁻ᵀ, plus the drift matrix."""
    m_inv = operator_matrix(p.inverse, p.shape)
    drift = operator_matrix(p.drift, p.shape)
    gap = float(np.max(np.abs(drift - m_inv @ m_inv.T)))
    if gap > 1e-9:
        logger.warning("drift recipe deviates from M⁻¹M⁻ᵀ by %.3e (max entry)", gap)
    else:
        logger.debug("drift recipe matches M⁻¹M⁻ᵀ to %.3e", gap)
    return gap, drift

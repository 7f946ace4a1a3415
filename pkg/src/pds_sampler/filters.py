"""Construction of the frequency filter R and the space filter A.

Frequency filters are returned in centered layout: frequency (0, 0) sits at
(H//2, W//2), matching the circle-in-the-middle picture of the mask. The
preconditioner un-centers them before multiplying an FFT.
"""

from __future__ import annotations
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .grid import Field, GridLike, GridShape, as_array, read_grid
from .spectral import center

logger = logging.getLogger(__name__)

# Floor for space-filter entries, keeps A invertible where the mean pixel is 0
SPACE_FILTER_FLOOR = 1e-6

GRID_SUFFIX = ".pdsgrid"


class DegenerateStatisticsError(ValueError):
    """Raised when sample statistics are identically zero."""


@dataclass(frozen=True)
class ParametricFilterSpec:
    """Radius ``r`` (pixels) and out-of-band gain ``lam`` of the circular mask."""

    r: float
    lam: float

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise ValueError(f"radius r must be > 0, got {self.r}")
        if not self.lam > 0:
            raise ValueError(f"lambda must be > 0, got {self.lam}")


@dataclass(frozen=True)
class StatisticalFilterSpec:
    alpha: float = 5.0

    def __post_init__(self) -> None:
        if not self.alpha >= 1:
            raise ValueError(f"alpha must be >= 1, got {self.alpha}")


def _stack(samples: Sequence[GridLike]) -> np.ndarray:
    if len(samples) == 0:
        raise ValueError("at least one sample is required")
    arrays = [as_array(s) for s in samples]
    first = arrays[0].shape
    for i, array in enumerate(arrays):
        if array.shape != first or array.ndim != 3:
            raise ValueError(f"sample {i} has shape {array.shape}, expected {first}")
    return np.stack(arrays).astype(np.float64)


def centered_distance_sq(shape: GridShape) -> np.ndarray:
    """Squared distance of every (h, w) bin from the centered DC bin."""
    h = np.arange(shape.height) - shape.height // 2
    w = np.arange(shape.width) - shape.width // 2
    return h[:, None] ** 2 + w[None, :] ** 2


def build_parametric_r(shape: GridShape, spec: ParametricFilterSpec) -> Field:
    """1 inside the circle (h-H/2)² + (w-W/2)² <= 2r², lambda outside."""
    inside = centered_distance_sq(shape) <= 2.0 * spec.r**2
    mask = np.where(inside, 1.0, float(spec.lam))
    r = Field(np.broadcast_to(mask, shape.as_tuple()))
    logger.info(
        "parametric R %s: r=%g lambda=%g, %d/%d bins inside the circle",
        shape, spec.r, spec.lam, int(inside.sum()), inside.size,
    )
    return r


def build_statistical_r(samples: Sequence[GridLike], spec: StatisticalFilterSpec) -> Field:
    """R from the log mean power spectrum of samples, normalized so max(R) == 1."""
    stack = _stack(samples)
    spectra = np.fft.fft2(stack, axes=(-2, -1))
    power = np.mean((spectra * np.conj(spectra)).real, axis=0)
    raw = np.log(power + 1.0)
    peak = float(raw.max())
    if peak <= 0.0:
        raise DegenerateStatisticsError(
            "frequency statistics are identically zero (all-zero samples); cannot normalize R"
        )
    alpha = float(spec.alpha)
    r = (raw / peak + alpha - 1.0) / alpha
    # the argmax entry must be exactly 1 despite rounding
    r[raw == peak] = 1.0
    logger.info(
        "statistical R from %d samples: alpha=%g, range [%.4g, %.4g]",
        stack.shape[0], alpha, r.min(), r.max(),
    )
    return Field(center(r))


def build_space_a(samples: Sequence[GridLike]) -> Field:
    """A = log(mean pixel + 1), normalized to max 1, floored at 1e-6."""
    stack = _stack(samples)
    if np.any(stack < 0):
        index = int(np.flatnonzero(stack < 0)[0])
        sample, position = divmod(index, stack[0].size)
        raise ValueError(
            f"space filter samples must be non-negative; sample {sample} has "
            f"{stack.reshape(-1)[index]!r} at flat index {position}"
        )
    a = np.log(stack.mean(axis=0) + 1.0)
    peak = float(a.max())
    if peak <= 0.0:
        raise DegenerateStatisticsError("space statistics are identically zero (all-zero samples)")
    a = a / peak
    a[a == a.max()] = 1.0
    clamped = int(np.count_nonzero(a < SPACE_FILTER_FLOOR))
    if clamped:
        logger.info("space filter: %d entries clamped to %g", clamped, SPACE_FILTER_FLOOR)
    return Field(np.maximum(a, SPACE_FILTER_FLOOR))


def uniform_a(shape: GridShape) -> Field:
    """All-ones space filter: no space preconditioning."""
    return Field.ones(shape)


def filter_summary(field: GridLike) -> Dict[str, Any]:
    array = as_array(field)
    shape = GridShape.of(array)
    return {
        "shape": str(shape),
        "min": float(array.min()),
        "max": float(array.max()),
    }


def load_samples(directory: Path, count: Optional[int] = None, seed: int = 0) -> List[Field]:
    """Read PDSGRID1 sample files from a directory (sorted by name).

    When ``count`` is smaller than the number of files, a seeded subset is
    drawn without replacement and kept in name order.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"samples directory not found: {directory}")
    paths = sorted(directory.glob(f"*{GRID_SUFFIX}"))
    if not paths:
        raise FileNotFoundError(f"no {GRID_SUFFIX} files in {directory}")
    if count is not None:
        if count < 1:
            raise ValueError(f"sample count must be >= 1, got {count}")
        if count < len(paths):
            rng = np.random.default_rng(seed)
            chosen = np.sort(rng.choice(len(paths), size=count, replace=False))
            paths = [paths[i] for i in chosen]
    return [read_grid(p) for p in paths]

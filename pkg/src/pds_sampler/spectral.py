"""Per-channel 2D Fourier transforms, circular shifts and orthogonal maps.

Convention: the forward transform is unnormalized and the inverse carries
1/(H·W), so frequency filters act multiplicatively with no hidden scale.
Transforms act on the last two axes, so batched arrays of shape
(..., C, H, W) work as well as single grids.
"""

from __future__ import annotations
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .grid import Field, GridLike, SpectralField, as_array, like

_AXES = (-2, -1)


def fft2(x: GridLike) -> GridLike:
    """Forward 2D DFT of every channel. Field in, SpectralField out."""
    out = np.fft.fft2(as_array(x), axes=_AXES)
    if isinstance(x, Field):
        return SpectralField(out)
    return out


def ifft2(s: GridLike) -> GridLike:
    """Inverse 2D DFT; the result stays complex (take real_part afterwards)."""
    out = np.fft.ifft2(as_array(s), axes=_AXES)
    if isinstance(s, (Field, SpectralField)):
        return SpectralField(out)
    return out


def center(spectrum: GridLike) -> GridLike:
    """Move frequency (0, 0) to the grid centre (H//2, W//2)."""
    return like(spectrum, np.fft.fftshift(as_array(spectrum), axes=_AXES))


def uncenter(spectrum: GridLike) -> GridLike:
    """Inverse of :func:`center`."""
    return like(spectrum, np.fft.ifftshift(as_array(spectrum), axes=_AXES))


def roll(x: GridLike, m: int, n: int) -> GridLike:
    """Circular shift P_{m,n}: out[c, h, w] = x[c, (h - m) mod H, (w - n) mod W]."""
    return like(x, np.roll(as_array(x), shift=(int(m), int(n)), axis=_AXES))


def reflect_frequencies(spectrum: GridLike) -> GridLike:
    """Index map (h, w) -> ((-h) mod H, (-w) mod W) on unshifted frequency grids."""
    flipped = np.flip(as_array(spectrum), axis=_AXES)
    return like(spectrum, np.roll(flipped, shift=(1, 1), axis=_AXES))


def is_hermitian_symmetric(spectrum: GridLike, rtol: float = 1e-9) -> bool:
    """True if s(h, w) == conj(s(-h, -w)) for every channel (unshifted layout)."""
    values = as_array(spectrum)
    mirror = np.conj(as_array(reflect_frequencies(values)))
    scale = max(float(np.max(np.abs(values))), 1.0)
    return bool(np.max(np.abs(values - mirror)) <= rtol * scale)


def symmetrize(spectrum: GridLike) -> GridLike:
    """Average a real frequency filter with its reflection so it becomes admissible."""
    values = as_array(spectrum)
    return like(spectrum, 0.5 * (values + as_array(reflect_frequencies(values))))


def direct_dft2(x: GridLike) -> np.ndarray:
    """Reference DFT evaluated as the explicit double sum (O(N^2) per channel)."""
    values = np.asarray(as_array(x), dtype=np.complex128)
    h, w = values.shape[-2:]
    rows = np.exp(-2j * np.pi * np.outer(np.arange(h), np.arange(h)) / h)
    cols = np.exp(-2j * np.pi * np.outer(np.arange(w), np.arange(w)) / w)
    return np.einsum("kh,...hw,wl->...kl", rows, values, cols)


@dataclass(frozen=True, eq=False)
class OrthogonalMap:
    """Real n×n matrix B with BᵀB = I."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        matrix = np.array(self.matrix, dtype=np.float64, copy=True)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"orthogonal map must be square, got shape {matrix.shape}")
        gap = np.linalg.norm(matrix.T @ matrix - np.eye(matrix.shape[0]), ord="fro")
        if gap > 1e-10:
            raise ValueError(f"matrix is not orthogonal: ||BᵀB - I||_F = {gap:.3e}")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def dimension(self) -> int:
        return int(self.matrix.shape[0])

    def apply_transpose(self, x) -> np.ndarray:
        return _matvec(self.matrix.T, x, self.dimension)


def _matvec(matrix: np.ndarray, x, dimension: int) -> np.ndarray:
    vector = np.asarray(x, dtype=np.float64)
    if vector.shape[-1] != dimension:
        raise ValueError(f"vector length {vector.shape[-1]} does not match map dimension {dimension}")
    return vector @ matrix.T


def apply_orthogonal(b: OrthogonalMap, x) -> np.ndarray:
    """x̃ = Bx for a flat vector (or a stack of flat vectors along the last axis)."""
    return _matvec(b.matrix, x, b.dimension)


def random_orthogonal(n: int, seed: Optional[int] = None) -> OrthogonalMap:
    """Haar-distributed orthogonal matrix from the QR factorization of a Gaussian matrix."""
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    q, r = scipy.linalg.qr(rng.standard_normal((n, n)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return OrthogonalMap(q * signs)

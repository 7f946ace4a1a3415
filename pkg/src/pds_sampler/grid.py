"""Dense C×H×W grid values, elementwise algebra and the PDSGRID1 file format."""

from __future__ import annotations
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np


# Divisors at or below this magnitude mean a filter is not invertible
DIVISOR_EPS = 1e-12

GRID_MAGIC = b"PDSGRID1        "
_DIMS = struct.Struct("<III")


class GridFormatError(ValueError):
    """Raised when a PDSGRID1 file is malformed."""


class SingularFilterError(ValueError):
    """Raised when an elementwise divisor is (numerically) zero."""


@dataclass(frozen=True)
class GridShape:
    """Channel, height and width of a grid."""

    channels: int
    height: int
    width: int

    def __post_init__(self) -> None:
        for name in ("channels", "height", "width"):
            value = getattr(self, name)
            if int(value) != value or value <= 0:
                raise ValueError(f"GridShape.{name} must be a positive integer, got {value!r}")

    @property
    def size(self) -> int:
        return self.channels * self.height * self.width

    def as_tuple(self) -> Tuple[int, int, int]:
        return (self.channels, self.height, self.width)

    @classmethod
    def of(cls, array: np.ndarray) -> "GridShape":
        """Shape of the trailing (C, H, W) axes of an array."""
        if array.ndim < 3:
            raise ValueError(f"expected an array with trailing (C, H, W) axes, got shape {array.shape}")
        c, h, w = array.shape[-3:]
        return cls(int(c), int(h), int(w))

    def __str__(self) -> str:
        return f"{self.channels}x{self.height}x{self.width}"


def _frozen(data, dtype) -> np.ndarray:
    array = np.array(data, dtype=dtype, copy=True)
    if array.ndim != 3:
        raise ValueError(f"grid data must have shape (C, H, W), got {array.shape}")
    GridShape.of(array)
    if not np.all(np.isfinite(array)):
        raise ValueError("grid data contains NaN or Inf entries")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Field:
    """Real-valued C×H×W grid (double precision, read-only)."""

    data: np.ndarray

    def __post_init__(self) -> None:
        if np.iscomplexobj(self.data):
            raise ValueError("Field data must be real; use SpectralField for complex grids")
        object.__setattr__(self, "data", _frozen(self.data, np.float64))

    @property
    def shape(self) -> GridShape:
        return GridShape.of(self.data)

    @property
    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    def to_array(self) -> np.ndarray:
        return self.data.copy()

    @classmethod
    def full(cls, shape: GridShape, value: float) -> "Field":
        return cls(np.full(shape.as_tuple(), float(value)))

    @classmethod
    def zeros(cls, shape: GridShape) -> "Field":
        return cls.full(shape, 0.0)

    @classmethod
    def ones(cls, shape: GridShape) -> "Field":
        return cls.full(shape, 1.0)

    @classmethod
    def from_flat(cls, shape: GridShape, values) -> "Field":
        values = np.asarray(values, dtype=np.float64)
        if values.size != shape.size:
            raise ValueError(f"expected {shape.size} values for a {shape} grid, got {values.size}")
        return cls(values.reshape(shape.as_tuple()))

    def __repr__(self) -> str:
        return f"Field({self.shape}, min={self.data.min():.4g}, max={self.data.max():.4g})"


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Complex-valued C×H×W grid, the frequency-domain counterpart of Field."""

    data: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "data", _frozen(self.data, np.complex128))

    @property
    def shape(self) -> GridShape:
        return GridShape.of(self.data)

    @property
    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)

    def to_array(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        return f"SpectralField({self.shape})"


GridLike = Union[Field, SpectralField, np.ndarray]


def as_array(x: GridLike) -> np.ndarray:
    """Underlying array of a grid value; plain arrays pass through."""
    if isinstance(x, (Field, SpectralField)):
        return x.data
    return np.asarray(x)


def like(template: GridLike, array: np.ndarray) -> GridLike:
    """Wrap ``array`` in the same kind of value as ``template``."""
    if isinstance(template, Field):
        return Field(np.real(array) if np.iscomplexobj(array) else array)
    if isinstance(template, SpectralField):
        return SpectralField(array)
    return array


def _check_pair(a: GridLike, b: GridLike) -> Tuple[np.ndarray, np.ndarray]:
    if isinstance(a, (Field, SpectralField)) and type(a) is not type(b):
        raise ValueError(f"cannot combine {type(a).__name__} with {type(b).__name__}")
    left, right = as_array(a), as_array(b)
    if left.shape != right.shape:
        raise ValueError(f"shape mismatch: {left.shape} vs {right.shape}")
    return left, right


def elementwise_mul(a: GridLike, b: GridLike) -> GridLike:
    """out[i] = a[i]·b[i]."""
    left, right = _check_pair(a, b)
    return like(a, left * right)


def elementwise_div(a: GridLike, b: GridLike) -> GridLike:
    """out[i] = a[i]/b[i]; fails on any divisor with |b[i]| <= 1e-12."""
    left, right = _check_pair(a, b)
    bad = np.flatnonzero(np.abs(right) <= DIVISOR_EPS)
    if bad.size:
        index = int(bad[0])
        position = np.unravel_index(index, right.shape)
        raise SingularFilterError(
            f"near-zero divisor {right.flat[index]!r} at flat index {index} "
            f"(position {tuple(int(p) for p in position)}): filter is not invertible"
        )
    return like(a, left / right)


def elementwise_add(a: GridLike, b: GridLike) -> GridLike:
    left, right = _check_pair(a, b)
    return like(a, left + right)


def scale(a: GridLike, factor: float) -> GridLike:
    return like(a, as_array(a) * factor)


def real_part(s: GridLike) -> GridLike:
    """Drop the imaginary component of a spectral grid."""
    real = np.real(as_array(s)).astype(np.float64)
    if isinstance(s, SpectralField):
        return Field(real)
    return real


def inner(a: GridLike, b: GridLike) -> float:
    """Real Euclidean inner product over all entries."""
    left, right = _check_pair(a, b)
    return float(np.vdot(left, right).real)


# --- PDSGRID1 serialization -------------------------------------------------

def write_grid(path: Path, field: Field) -> Path:
    """Write a real grid: 16-byte magic, <u32 C,H,W, then <f64 payload row-major."""
    array = as_array(field)
    if np.iscomplexobj(array):
        raise GridFormatError("complex grids are never serialized")
    array = np.ascontiguousarray(array, dtype="<f8")
    shape = GridShape.of(array)
    if array.ndim != 3:
        raise GridFormatError(f"only single (C, H, W) grids can be written, got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise GridFormatError("refusing to write a grid with NaN or Inf entries")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(GRID_MAGIC)
        f.write(_DIMS.pack(*shape.as_tuple()))
        f.write(array.tobytes(order="C"))
    return path


def _read_header(raw: bytes, path: Path) -> GridShape:
    if len(raw) < len(GRID_MAGIC) + _DIMS.size or raw[: len(GRID_MAGIC)] != GRID_MAGIC:
        raise GridFormatError(f"{path} is not a PDSGRID1 file")
    try:
        return GridShape(*_DIMS.unpack_from(raw, len(GRID_MAGIC)))
    except ValueError as e:
        raise GridFormatError(f"{path}: invalid dimensions ({e})") from e


def read_grid_header(path: Path) -> GridShape:
    path = Path(path)
    with open(path, "rb") as f:
        raw = f.read(len(GRID_MAGIC) + _DIMS.size)
    return _read_header(raw, path)


def read_grid(path: Path) -> Field:
    path = Path(path)
    raw = path.read_bytes()
    shape = _read_header(raw, path)
    offset = len(GRID_MAGIC) + _DIMS.size
    expected = shape.size * 8
    if len(raw) - offset != expected:
        raise GridFormatError(
            f"{path}: payload is {len(raw) - offset} bytes, expected {expected} for a {shape} grid"
        )
    values = np.frombuffer(raw, dtype="<f8", count=shape.size, offset=offset)
    try:
        return Field(values.reshape(shape.as_tuple()))
    except ValueError as e:
        raise GridFormatError(f"{path}: {e}") from e

"""Periodic regular grids, fields on them, discrete norms and transfer operators.

A grid of ``n`` nodes per axis covers ``[0, 1)^dim`` with nodes at ``i / n``.
Fields store their values as an ``(n,)`` or ``(n, n)`` float64 array.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import ResolutionMismatchError, TooCoarseError, UnsupportedDimensionError

RESTRICTIONS = ("fourier", "average")
INTERPOLATIONS = ("cubic", "linear")


@dataclass(frozen=True)
class Grid:
    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise UnsupportedDimensionError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")

    @property
    def step(self) -> Fraction:
        return Fraction(1, self.n)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    def coords(self):
        """Node coordinates; a 1-D array, or an ``(x, y)`` meshgrid pair in 2-D."""
        x = np.arange(self.n) / self.n
        if self.dim == 1:
            return x
        return np.meshgrid(x, x, indexing="ij")


@dataclass(frozen=True, eq=False)
class Field:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64).reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def __eq__(self, other):
        return (
            isinstance(other, Field)
            and self.grid == other.grid
            and np.array_equal(self.values, other.values)
        )

    def __add__(self, other):
        return Field(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return Field(self.grid, self.values - _vals(other))

    def __mul__(self, scalar):
        return Field(self.grid, self.values * scalar)

    __rmul__ = __mul__


def _vals(x):
    return x.values if isinstance(x, Field) else x


def constant(grid: Grid, c: float) -> Field:
    return Field(grid, np.full(grid.shape, float(c)))


def grid_l2(f: Field) -> float:
    """Grid L2 norm ``sqrt(h^dim * sum f_i^2)``."""
    return float(np.sqrt(f.grid.h**f.grid.dim * np.sum(f.values**2)))


def vec2(f) -> float:
    """Plain Euclidean norm of the nodal values."""
    return float(np.sqrt(np.sum(np.square(_vals(f)))))


def _check_divides(n_coarse: int, n_fine: int):
    if n_coarse <= 0 or n_fine % n_coarse:
        raise ResolutionMismatchError(f"{n_coarse} does not divide {n_fine}")


def _low_mode_index(n_from: int, n_keep: int) -> np.ndarray:
    """FFT indices (on an ``n_from`` grid) of modes with ``|k| < n_keep / 2``."""
    kmax = (n_keep - 1) // 2
    return np.r_[0 : kmax + 1, n_from - kmax : n_from]


def _fourier_resample(a: np.ndarray, n_out: int, n_modes: int) -> np.ndarray:
    n_in = a.shape[0]
    spec = np.fft.fftn(a)
    idx_in = _low_mode_index(n_in, n_modes)
    idx_out = _low_mode_index(n_out, n_modes)
    out = np.zeros((n_out,) * a.ndim, dtype=complex)
    if a.ndim == 1:
        out[idx_out] = spec[idx_in]
    else:
        out[np.ix_(idx_out, idx_out)] = spec[np.ix_(idx_in, idx_in)]
    out *= (n_out / n_in) ** a.ndim
    return np.real(np.fft.ifftn(out))


def _average_weights(r: int) -> np.ndarray:
    # centred on the coarse node; even ratios get half weights at the two ends
    if r % 2:
        return np.full(r, 1.0 / r)
    w = np.full(r + 1, 1.0 / r)
    w[0] = w[-1] = 0.5 / r
    return w


def _average_1d(a: np.ndarray, r: int, axis: int) -> np.ndarray:
    w = _average_weights(r)
    half = (len(w) - 1) // 2
    n_coarse = a.shape[axis] // r
    centres = np.arange(n_coarse) * r
    out = 0.0
    for k, wk in enumerate(w):
        out = out + wk * np.take(a, (centres + k - half) % a.shape[axis], axis=axis)
    return out


def restrict(f: Field, kind: str, n_coarse: int) -> Field:
    """Restrict ``f`` to a coarser grid of ``n_coarse`` nodes per axis.

    ``fourier`` keeps the modes with ``|k| < n_coarse / 2`` on every axis (the
    coarse Nyquist mode is dropped). ``average`` takes a block mean centred on
    each coarse node.
    """
    n_fine = f.grid.n
    _check_divides(n_coarse, n_fine)
    if n_coarse < 4:
        raise TooCoarseError(f"coarse grid must have at least 4 nodes, got {n_coarse}")
    if kind not in RESTRICTIONS:
        raise ValueError(f"unknown restriction kind {kind!r}")
    coarse = Grid(f.grid.dim, n_coarse)
    if n_coarse == n_fine:
        return Field(coarse, f.values)
    if kind == "fourier":
        return Field(coarse, _fourier_resample(f.values, n_coarse, n_coarse))
    a = f.values
    r = n_fine // n_coarse
    for axis in range(f.grid.dim):
        a = _average_1d(a, r, axis)
    return Field(coarse, a)


def fourier_prolong(f: Field, n_fine: int) -> Field:
    """Trigonometric interpolation by zero padding in Fourier space."""
    _check_divides(f.grid.n, n_fine)
    return Field(Grid(f.grid.dim, n_fine), _fourier_resample(f.values, n_fine, f.grid.n))


def _interp_weights(kind: str, r: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-phase weights and neighbour offsets for coarse-to-fine interpolation."""
    t = np.arange(r) / r
    if kind == "linear":
        return np.stack([1 - t, t], axis=1), np.array([0, 1])
    # Catmull-Rom
    w = 0.5 * np.stack(
        [
            -t + 2 * t**2 - t**3,
            2 - 5 * t**2 + 3 * t**3,
            t + 4 * t**2 - 3 * t**3,
            -(t**2) + t**3,
        ],
        axis=1,
    )
    return w, np.array([-1, 0, 1, 2])


def _interp_1d(a: np.ndarray, kind: str, r: int, axis: int) -> np.ndarray:
    weights, offsets = _interp_weights(kind, r)
    n_c = a.shape[axis]
    j = np.arange(n_c * r)
    base, phase = j // r, j % r
    out = 0.0
    for k, off in enumerate(offsets):
        shape = [1] * a.ndim
        shape[axis] = -1
        out = out + weights[phase, k].reshape(shape) * np.take(a, (base + off) % n_c, axis=axis)
    return out


def interpolate(f: Field, kind: str, n_fine: int) -> Field:
    """Periodic (bi)linear or Catmull-Rom (bi)cubic interpolation to ``n_fine``."""
    n_coarse = f.grid.n
    _check_divides(n_coarse, n_fine)
    if kind not in INTERPOLATIONS:
        raise ValueError(f"unknown interpolation kind {kind!r}")
    fine = Grid(f.grid.dim, n_fine)
    if n_coarse == n_fine:
        return Field(fine, f.values)
    a = f.values
    r = n_fine // n_coarse
    for axis in range(f.grid.dim):
        a = _interp_1d(a, kind, r, axis)
    return Field(fine, a)

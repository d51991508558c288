"""Periodic grids and Fourier-space calculus.

Every field in the package lives on a :class:`Grid`, a uniform periodic box in
1, 2 or 3 dimensions. Field values are plain numpy arrays whose trailing ``d``
axes are the spatial axes; any leading axes (spinor components, ensemble
members, vector components) are carried along untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid.

    Attributes
    ----------
    d : int
        Spatial dimension.
    n : tuple of int
        Points per axis.
    L : tuple of float
        Box length per axis.
    origin : tuple of float
        Coordinate of the first grid point on each axis.
    """

    d: int
    n: tuple
    L: tuple
    origin: tuple = ()

    def __post_init__(self):
        if not self.origin:
            object.__setattr__(self, "origin", (0.0,) * self.d)

    @property
    def shape(self) -> tuple:
        return tuple(self.n)

    @property
    def size(self) -> int:
        return int(np.prod(self.n))

    @property
    def h(self) -> tuple:
        return tuple(L / n for L, n in zip(self.L, self.n))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def axes(self) -> tuple:
        """1D coordinate arrays, one per axis."""
        return tuple(o + h * np.arange(n) for o, h, n in zip(self.origin, self.h, self.n))

    @property
    def k(self) -> tuple:
        """Angular wavenumbers per axis in FFT ordering."""
        return tuple(2 * np.pi * np.fft.fftfreq(n, d=h) for n, h in zip(self.n, self.h))

    @property
    def center(self) -> np.ndarray:
        return np.array([o + L / 2 for o, L in zip(self.origin, self.L)])

    def mesh(self) -> tuple:
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    def kmesh(self) -> tuple:
        return tuple(np.meshgrid(*self.k, indexing="ij"))

    @cached_property
    def k2(self) -> np.ndarray:
        return sum(kk**2 for kk in self.kmesh())

    @cached_property
    def k2_odd(self) -> np.ndarray:
        """``sum_a k_odd(a)^2``, the symbol of ``-sum_a D_a D_a``."""
        return sum(self.k_odd(a) ** 2 for a in range(self.d))

    def k_odd(self, axis: int) -> np.ndarray:
        """Wavenumbers on ``axis`` with the Nyquist mode zeroed, broadcast to the grid."""
        k = self.k[axis].copy()
        k[self.n[axis] // 2] = 0.0
        shape = [1] * self.d
        shape[axis] = self.n[axis]
        return k.reshape(shape)

    def displacement(self, x, center) -> np.ndarray:
        """Minimum-image displacement ``x - center`` along each axis.

        ``x`` has shape ``(..., d)`` or is a tuple of coordinate arrays.
        """
        x = np.asarray(x, dtype=float)
        L = np.asarray(self.L)
        dx = x - np.asarray(center, dtype=float)
        return dx - L * np.round(dx / L)

    def wrap(self, x) -> np.ndarray:
        """Wrap positions of shape ``(..., d)`` into the box."""
        o = np.asarray(self.origin)
        L = np.asarray(self.L)
        return o + np.mod(np.asarray(x) - o, L)


def make_grid(d: int, n, L, origin=None) -> Grid:
    """Build a periodic grid, validating dimension, sizes and lengths.

    ``n`` and ``L`` may be scalars (same for every axis) or length-``d`` sequences.
    """
    if d not in (1, 2, 3):
        raise ValueError(f"dimension must be 1, 2 or 3, got {d}")
    n = tuple(int(v) for v in np.broadcast_to(np.asarray(n), (d,)))
    L = tuple(float(v) for v in np.broadcast_to(np.asarray(L, dtype=float), (d,)))
    for v in n:
        if v % 2:
            raise ValueError(f"odd grid size {v}")
        if v < 8:
            raise ValueError(f"grid size {v} below minimum of 8")
    for v in L:
        if not np.isfinite(v) or v <= 0:
            raise ValueError(f"box length must be positive, got {v}")
    if origin is None:
        origin = (0.0,) * d
    origin = tuple(float(v) for v in np.broadcast_to(np.asarray(origin, dtype=float), (d,)))
    return Grid(d, n, L, origin)


def _axes(grid: Grid) -> tuple:
    return tuple(range(-grid.d, 0))


def fft(grid: Grid, values):
    return sfft.fftn(values, axes=_axes(grid))


def ifft(grid: Grid, values):
    return sfft.ifftn(values, axes=_axes(grid))


def _maybe_real(values, out):
    return out.real if np.isrealobj(values) else out


def _check_shape(grid: Grid, values):
    if tuple(np.shape(values)[-grid.d :]) != grid.shape:
        raise ValueError(f"field shape {np.shape(values)} does not match grid {grid.shape}")


def spectral_derivative(grid: Grid, values, axis: int):
    """First derivative along ``axis`` by multiplication with ``i k``.

    The Nyquist mode is dropped so the operator stays anti-Hermitian and maps
    real fields to real fields.
    """
    if not 0 <= axis < grid.d:
        raise ValueError(f"axis {axis} out of range for d={grid.d}")
    _check_shape(grid, values)
    out = ifft(grid, 1j * grid.k_odd(axis) * fft(grid, values))
    return _maybe_real(values, out)


def gradient(grid: Grid, values):
    """Stack of first derivatives, new leading axis of length ``d``."""
    vhat = fft(grid, values)
    out = np.stack([ifft(grid, 1j * grid.k_odd(a) * vhat) for a in range(grid.d)])
    return _maybe_real(values, out)


def divergence(grid: Grid, vector):
    """Divergence of a field with leading component axis of length ``d``."""
    return sum(spectral_derivative(grid, vector[a], a) for a in range(grid.d))


def laplacian(grid: Grid, values):
    _check_shape(grid, values)
    out = ifft(grid, -grid.k2 * fft(grid, values))
    return _maybe_real(values, out)


def spectral_shift(grid: Grid, values, offset):
    """Return ``values(x + offset)`` for the band-limited interpolant.

    The Nyquist mode is shifted with ``cos`` so that real input stays real.
    """
    _check_shape(grid, values)
    offset = np.broadcast_to(np.asarray(offset, dtype=float), (grid.d,))
    phase = np.ones(grid.shape, dtype=complex)
    for a in range(grid.d):
        ph = np.exp(1j * grid.k[a] * offset[a])
        ph[grid.n[a] // 2] = np.cos(grid.k[a][grid.n[a] // 2] * offset[a])
        shape = [1] * grid.d
        shape[a] = grid.n[a]
        phase = phase * ph.reshape(shape)
    out = ifft(grid, phase * fft(grid, values))
    return _maybe_real(values, out)


def interpolation_matrix(grid: Grid, axis: int, points) -> np.ndarray:
    """Matrix evaluating the trigonometric interpolant along one axis.

    ``M @ f`` gives the interpolant of the samples ``f`` (taken along ``axis``)
    at the coordinates ``points``.
    """
    n = grid.n[axis]
    k = grid.k[axis]
    x = np.asarray(points, dtype=float) - grid.origin[axis]
    phases = np.exp(1j * np.outer(x, k))
    phases[:, n // 2] = np.cos(x * k[n // 2])
    dft = np.exp(-2j * np.pi * np.outer(np.arange(n), np.arange(n)) / n)
    return phases @ dft / n


def norm2(grid: Grid, values) -> float:
    """Periodic quadrature of ``|values|^2`` over the box (all leading axes summed)."""
    return float(np.sum(np.abs(values) ** 2) * grid.cell_volume)


def spectral_norm2(grid: Grid, values) -> float:
    """The same quantity as :func:`norm2` computed from Fourier coefficients."""
    vhat = fft(grid, values)
    return float(np.sum(np.abs(vhat) ** 2) * grid.cell_volume / grid.size)


def integrate(grid: Grid, values):
    """Sum over the trailing spatial axes times the cell volume."""
    return np.sum(values, axis=_axes(grid)) * grid.cell_volume

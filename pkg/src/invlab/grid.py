"""Uniform tensor grids on the box [0, L]^dim and spectral helpers.

Two node sets live on a grid:

* the *periodic* nodes ``x = i*h`` for ``i = 0..n-1`` (shape ``(n,)*dim``),
  used by every FFT-based operation;
* the *closed* nodes ``i = 0..n`` (shape ``(n+1,)*dim``), used by the
  finite-difference Dirichlet problem. Its outermost layer is the boundary.

Fields are plain numpy arrays. Spectral operations accept an optional
``shift`` vector ``beta``: the array then holds the periodic factor ``phi`` of
the quasi-periodic function ``exp(i beta.x) * phi(x)`` and every derivative is
taken with the shifted wave numbers ``k + beta``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import DimensionError, ParameterError


def _is_smooth(n: int) -> bool:
    for p in (2, 3, 5):
        while n % p == 0:
            n //= p
    return n == 1


@dataclass(frozen=True)
class Grid:
    dim: int
    n: int
    L: float = 1.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ParameterError(f"dim must be 2 or 3, got {self.dim}")
        if self.n < 4 or self.n % 2 or not _is_smooth(self.n):
            raise ParameterError(f"n must be even, >= 4 and 5-smooth (e.g. 16, 24, 32, 48), got {self.n}")
        if not self.L > 0:
            raise ParameterError(f"box side must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def closed_shape(self) -> tuple[int, ...]:
        return (self.n + 1,) * self.dim

    @property
    def center(self) -> np.ndarray:
        return np.full(self.dim, 0.5 * self.L)

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    def axis(self, closed: bool = False) -> np.ndarray:
        m = self.n + 1 if closed else self.n
        return np.arange(m) * self.h

    def coords(self, closed: bool = False) -> list[np.ndarray]:
        """Broadcastable coordinate arrays (open mesh)."""
        ax = self.axis(closed)
        out = []
        for j in range(self.dim):
            shp = [1] * self.dim
            shp[j] = ax.size
            out.append(ax.reshape(shp))
        return out

    def mesh(self, closed: bool = False) -> np.ndarray:
        """Node coordinates stacked on the last axis."""
        return np.stack(np.meshgrid(*([self.axis(closed)] * self.dim), indexing="ij"), axis=-1)

    @cached_property
    def wavenumbers(self) -> list[np.ndarray]:
        """Dual-lattice wave numbers 2*pi*m/L per axis, broadcastable."""
        k1 = 2 * np.pi * sfft.fftfreq(self.n, d=self.h)
        out = []
        for j in range(self.dim):
            shp = [1] * self.dim
            shp[j] = self.n
            out.append(k1.reshape(shp))
        return out

    def shifted_wavenumbers(self, shift=None) -> list[np.ndarray]:
        if shift is None:
            return self.wavenumbers
        return [k + b for k, b in zip(self.wavenumbers, np.asarray(shift, float))]

    def k_squared(self, shift=None) -> np.ndarray:
        return sum(k**2 for k in self.shifted_wavenumbers(shift))

    def check(self, values: np.ndarray, closed: bool = False) -> np.ndarray:
        shp = self.closed_shape if closed else self.shape
        values = np.asarray(values)
        if values.shape != shp:
            raise DimensionError(f"field shape {values.shape} does not match grid {shp}")
        return values

    def contains(self, point, margin: float = 0.0) -> bool:
        p = np.asarray(point, float)
        return bool(np.all(p > margin) and np.all(p < self.L - margin))


# --- transforms -------------------------------------------------------------


def spectrum(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Fourier-series coefficients (mean convention): f = sum_k c_k exp(i k.x)."""
    grid.check(values)
    return sfft.fftn(values) / values.size


def inverse_spectrum(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    grid.check(coeffs)
    return sfft.ifftn(coeffs) * coeffs.size


def fourier_transform(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Discrete realization of g^(eta) = int g exp(-i eta.x) dx on the dual lattice."""
    grid.check(values)
    return sfft.fftn(values) * grid.cell_volume


def fourier_transform_at(values: np.ndarray, grid: Grid, eta) -> complex:
    """Same quadrature as :func:`fourier_transform`, at an arbitrary frequency."""
    grid.check(values)
    phase = sum(e * x for e, x in zip(np.asarray(eta, float), grid.coords()))
    return complex(np.sum(values * np.exp(-1j * phase)) * grid.cell_volume)


def derivative(values: np.ndarray, grid: Grid, alpha, shift=None) -> np.ndarray:
    """Spectral partial derivative d^alpha (alpha a multi-index)."""
    alpha = tuple(alpha)
    if not any(alpha):
        return np.asarray(values)
    ks = grid.shifted_wavenumbers(shift)
    mult = 1.0
    for k, a in zip(ks, alpha):
        if a:
            mult = mult * (1j * k) ** a
    out = sfft.ifftn(sfft.fftn(values) * mult)
    if shift is None and np.isrealobj(values):
        return out.real
    return out


def gradient(values: np.ndarray, grid: Grid, shift=None) -> list[np.ndarray]:
    eye = np.eye(grid.dim, dtype=int)
    return [derivative(values, grid, eye[j], shift) for j in range(grid.dim)]


def laplacian(values: np.ndarray, grid: Grid, shift=None) -> np.ndarray:
    out = sfft.ifftn(-grid.k_squared(shift) * sfft.fftn(values))
    if shift is None and np.isrealobj(values):
        return out.real
    return out


def multi_indices(dim: int, order: int):
    """All multi-indices alpha with |alpha| <= order, sorted by order."""
    out = [a for a in itertools.product(range(order + 1), repeat=dim) if sum(a) <= order]
    return sorted(out, key=lambda a: (sum(a), tuple(-x for x in a)))


def to_closed(values: np.ndarray, grid: Grid, shift=None) -> np.ndarray:
    """Periodic (or quasi-periodic factor) samples -> closed-node samples.

    The i = n layer is the periodic image of i = 0, multiplied by the Bloch
    phase exp(i beta_j L) when a shift is given.
    """
    grid.check(values)
    out = np.pad(values, [(0, 1)] * grid.dim, mode="wrap")
    if shift is not None:
        out = out * bloch_phase(grid, shift, closed=True)
    return out


def bloch_phase(grid: Grid, shift, closed: bool = False) -> np.ndarray:
    phase = sum(b * x for b, x in zip(np.asarray(shift, float), grid.coords(closed)))
    return np.exp(1j * phase)


def interior(values: np.ndarray) -> np.ndarray:
    """Strip the boundary layer of a closed-node array."""
    return values[(slice(1, -1),) * values.ndim]


def _lagrange4(t: np.ndarray) -> np.ndarray:
    """Cubic Lagrange weights on nodes 0..3 at local coordinates t (shape (P,) -> (P, 4))."""
    t = t[:, None]
    return np.concatenate(
        [
            -(t - 1) * (t - 2) * (t - 3) / 6,
            t * (t - 2) * (t - 3) / 2,
            -t * (t - 1) * (t - 3) / 2,
            t * (t - 1) * (t - 2) / 6,
        ],
        axis=1,
    )


def interpolate(values: np.ndarray, grid: Grid, points) -> np.ndarray:
    """Fourth-order local (4-point tensor Lagrange) interpolation of a periodic field.

    Exact at nodes; indices wrap periodically.
    """
    grid.check(values)
    pts = np.atleast_2d(np.asarray(points, float))
    s = pts / grid.h
    base = np.floor(s).astype(np.int64) - 1
    t = s - base
    out = np.zeros(pts.shape[0], dtype=np.result_type(values, float))
    weights = [_lagrange4(t[:, j]) for j in range(grid.dim)]
    for offs in itertools.product(range(4), repeat=grid.dim):
        w = np.ones(pts.shape[0])
        idx = []
        for j, o in enumerate(offs):
            w = w * weights[j][:, o]
            idx.append((base[:, j] + o) % grid.n)
        out += w * values[tuple(idx)]
    return out


def interpolate_closed(values: np.ndarray, grid: Grid, points) -> np.ndarray:
    """Fourth-order tensor Lagrange interpolation of closed-node samples (stencils clamped inside)."""
    grid.check(values, closed=True)
    pts = np.atleast_2d(np.asarray(points, float))
    s = pts / grid.h
    base = np.clip(np.floor(s).astype(np.int64) - 1, 0, grid.n - 3)
    t = s - base
    out = np.zeros(pts.shape[0], dtype=np.result_type(values, float))
    weights = [_lagrange4(t[:, j]) for j in range(grid.dim)]
    for offs in itertools.product(range(4), repeat=grid.dim):
        w = np.ones(pts.shape[0])
        idx = []
        for j, o in enumerate(offs):
            w = w * weights[j][:, o]
            idx.append(base[:, j] + o)
        out += w * values[tuple(idx)]
    return out

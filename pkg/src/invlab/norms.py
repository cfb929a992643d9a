"""Sobolev-type norms on the grid and the smooth cutoff.

Conventions: for a field g sampled on the periodic nodes with Fourier
coefficients c_k (mean convention),

    ||g||_{H^{-s}}^2 = L^d * sum_k |c_k|^2 (1 + |k|^2)^(-s),

which is the lattice version of (2 pi)^-d int |g^(eta)|^2 (1+|eta|^2)^-s deta.
The weighted norms measure the weight (1 + |x - c|^2)^delta from the box
center c.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from scipy.special import gamma, kv

from .errors import ParameterError
from .grid import Grid, derivative, multi_indices


@dataclass(frozen=True)
class SobolevSpec:
    s: int
    delta: float = 0.0

    def __post_init__(self):
        if int(self.s) != self.s or self.s < 0:
            raise ParameterError(f"Sobolev order must be a non-negative integer, got {self.s}")


def l2_norm(values: np.ndarray, grid: Grid) -> float:
    return float(np.sqrt(np.sum(np.abs(values) ** 2) * grid.cell_volume))


def weight(grid: Grid, delta: float) -> np.ndarray:
    r2 = sum((x - c) ** 2 for x, c in zip(grid.coords(), grid.center))
    return (1.0 + r2) ** delta


def weighted_sobolev_norm(values, grid: Grid, spec: SobolevSpec | int, shift=None) -> float:
    """sum_{|alpha| <= s} || (1 + |x|^2)^delta d^alpha v ||_{L^2}, derivatives spectral."""
    if not isinstance(spec, SobolevSpec):
        spec = SobolevSpec(spec)
    values = grid.check(values)
    w = weight(grid, spec.delta) if spec.delta else 1.0
    fhat = sfft.fftn(values)
    ks = grid.shifted_wavenumbers(shift)
    total = 0.0
    for alpha in multi_indices(grid.dim, spec.s):
        if any(alpha) or shift is not None:
            mult = 1.0
            for k, a in zip(ks, alpha):
                if a:
                    mult = mult * (1j * k) ** a
            d = sfft.ifftn(fhat * mult)
        else:
            d = values
        total += l2_norm(w * d, grid)
    return total


def sobolev_norm(values, grid: Grid, s: int, shift=None) -> float:
    return weighted_sobolev_norm(values, grid, SobolevSpec(s, 0.0), shift)


def negative_sobolev_norm(values, grid: Grid, s: float, shift=None) -> float:
    if not s > grid.dim / 2:
        raise ParameterError(f"negative Sobolev order needs s > dim/2, got s={s}")
    c = sfft.fftn(grid.check(values)) / values.size
    w = (1.0 + grid.k_squared(shift)) ** (-s)
    return float(np.sqrt(grid.L**grid.dim * np.sum(np.abs(c) ** 2 * w)))


def bessel_potential_kernel(r, s: float, dim: int):
    """G(r) = (2 pi)^-d int exp(i eta.x) (1 + |eta|^2)^-s d eta, |x| = r."""
    nu = s - dim / 2
    r = np.asarray(r, float)
    g0 = gamma(nu) / ((4 * np.pi) ** (dim / 2) * gamma(s))
    safe = np.where(r > 1e-12, r, 1.0)
    g = 2 ** (1 - s) / ((2 * np.pi) ** (dim / 2) * gamma(s)) * safe**nu * kv(nu, safe)
    return np.where(r > 1e-12, g, g0)


def source_diff_norm(a1, z1, a2, z2, s: float) -> float:
    """|| a1 delta_{z1} - a2 delta_{z2} ||_{H^{-s}(R^d)}, evaluated in closed form."""
    z1 = np.asarray(z1, float)
    z2 = np.asarray(z2, float)
    dim = z1.size
    if not s > dim / 2:
        raise ParameterError(f"point sources lie in H^-s only for s > dim/2, got s={s}")
    r = float(np.linalg.norm(z1 - z2))
    g0 = float(bessel_potential_kernel(0.0, s, dim))
    gr = float(bessel_potential_kernel(r, s, dim))
    val = abs(a1 - a2) ** 2 * g0 + 2 * np.real(a1 * np.conj(a2)) * (g0 - gr)
    return float(np.sqrt(max(val, 0.0)))


# --- cutoff -------------------------------------------------------------------


def smoothstep7(t):
    """C^3 polynomial step from 0 (t <= 0) to 1 (t >= 1)."""
    t = np.clip(t, 0.0, 1.0)
    # the polynomial overshoots 1 by an ulp just below t = 1
    return np.minimum(t**4 * (35 - 84 * t + 70 * t**2 - 20 * t**3), 1.0)


def cutoff_profile(grid: Grid, margin: float, closed: bool = False) -> np.ndarray:
    if not 0 < margin < grid.L / 4:
        raise ParameterError(f"cutoff margin must lie in (0, L/4), got {margin}")
    chi = 1.0
    for x in grid.coords(closed):
        chi = chi * smoothstep7((x - margin) / margin) * smoothstep7((grid.L - x - margin) / margin)
    return np.broadcast_to(chi, grid.closed_shape if closed else grid.shape).copy()


def apply_cutoff(values, grid: Grid, margin: float, closed: bool = False) -> np.ndarray:
    """Multiply by the plateau function: 1 beyond 2*margin from the faces, 0 within margin."""
    grid.check(values, closed)
    return values * cutoff_profile(grid, margin, closed)

"""Complex geometrical optics (CGO) machinery.

Everything lives on the periodic extension of the box. A CGO solution is
u = exp(kappa.(x - origin)) (1 + psi), where psi solves the conjugated
equation L_kappa psi + q psi = -q on the torus. Two realizations of L_kappa
are available:

``spectral``
    kappa = xi/2 and L_kappa has the symbol -|k|^2 + i xi.k (the Faddeev-type
    kernel K_xi is its inverse).
``fd``
    kappa is the nearby exponent that is *exactly* harmonic for the 7-point
    Laplacian (sum_j cosh(kappa_j h) = d) and L_kappa is the conjugated
    7-point Laplacian, symbol sum_j (2 cosh(kappa_j h + i k_j h) - 2) / h^2.
    CGOs built this way are exact discrete solutions, which is what makes
    the discrete Alessandrini identity usable with them.

The symbol vanishes at k = 0, so psi is represented on a shifted lattice
k + beta: arrays hold phi with psi = exp(i beta.x) phi (see :mod:`invlab.grid`).
For compactly supported data exp(-i beta.x) f is again smooth and periodic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .errors import (
    DimensionError,
    DivergenceError,
    NonvanishingError,
    ParameterError,
    PoleError,
    SeparationError,
)
from .grid import Grid, bloch_phase, interpolate, to_closed
from .norms import SobolevSpec, apply_cutoff, cutoff_profile, weighted_sobolev_norm


@dataclass(frozen=True)
class CgoConstants:
    """The unquantified constants of the CGO estimates, as configuration."""

    C1: float = 4.0
    C2: float = 4.0
    C3: float = 8.0
    C4: float = 8.0


DEFAULT_CONSTANTS = CgoConstants()


def cdot(a, b) -> complex:
    """Complex bilinear dot product (no conjugation)."""
    return complex(np.sum(np.asarray(a) * np.asarray(b)))


class CgoParameter:
    """A complex vector xi with xi.xi = 0 and |xi| >= 2."""

    def __init__(self, xi):
        xi = np.asarray(xi, dtype=complex)
        if xi.ndim != 1 or xi.size not in (2, 3):
            raise DimensionError(f"xi must be a vector of length 2 or 3, got shape {xi.shape}")
        norm2 = float(np.sum(np.abs(xi) ** 2))
        if abs(cdot(xi, xi)) > 1e-12 * norm2:
            raise ParameterError(f"xi.xi = {cdot(xi, xi):.3e} is not zero")
        if norm2 < 4.0:
            raise ParameterError(f"|xi| = {np.sqrt(norm2):.4g} < 2")
        self.xi = xi
        self.xi.setflags(write=False)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.xi))

    @property
    def dim(self) -> int:
        return self.xi.size

    def require_e1_positive(self):
        if not self.xi[0].real > 0:
            raise ParameterError(f"Re(xi).e1 = {self.xi[0].real:.4g} must be positive")

    def __repr__(self):
        return f"CgoParameter({np.array2string(self.xi, precision=6)})"


def as_xi(xi) -> np.ndarray:
    return xi.xi if isinstance(xi, CgoParameter) else CgoParameter(xi).xi


# --- frames ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CgoFrame:
    eta: np.ndarray
    rho: float
    alpha: np.ndarray
    zeta: np.ndarray

    @property
    def xi1(self) -> np.ndarray:
        return self.zeta + 1j * self.alpha - 1j * self.eta

    @property
    def xi2(self) -> np.ndarray:
        return -self.zeta - 1j * self.alpha - 1j * self.eta

    def defects(self) -> dict:
        e, a, z = self.eta, self.alpha, self.zeta
        x1, x2 = self.xi1, self.xi2
        return {
            "alpha.eta": abs(a @ e),
            "alpha.zeta": abs(a @ z),
            "eta.zeta": abs(e @ z),
            "|alpha|-rho": abs(np.linalg.norm(a) - self.rho),
            "|zeta|^2": abs(z @ z - e @ e - self.rho**2),
            "xi1+xi2": float(np.abs(x1 + x2 + 2j * e).max()),
            "|xi1|^2": abs(np.sum(np.abs(x1) ** 2) - 2 * z @ z),
            "|xi2|^2": abs(np.sum(np.abs(x2) ** 2) - 2 * z @ z),
            "xi1.xi1": abs(cdot(x1, x1)),
            "xi2.xi2": abs(cdot(x2, x2)),
        }

    def check(self, tol: float = 1e-12) -> bool:
        scale = max(1.0, self.rho**2 + float(self.eta @ self.eta))
        return all(v <= tol * scale for v in self.defects().values())

    def to_bytes(self) -> bytes:
        vals = np.concatenate([self.eta, self.alpha, self.zeta, [self.rho, 0.0, 0.0]])
        return vals.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CgoFrame":
        if len(blob) != 96:
            raise ValueError(f"frame record must be 96 bytes, got {len(blob)}")
        v = np.frombuffer(blob, dtype="<f8")
        return cls(v[0:3].copy(), float(v[9]), v[3:6].copy(), v[6:9].copy())


def make_frame(eta, rho: float) -> CgoFrame:
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (3,):
        raise DimensionError("frequency frames need dim = 3 (no orthogonal triple in d = 2)")
    if not rho > 0:
        raise ParameterError(f"rho must be positive, got {rho}")
    ne = np.linalg.norm(eta)
    eye = np.eye(3)
    if ne == 0:
        a_hat, z_hat = eye[1], eye[2]
    else:
        e_hat = eta / ne
        p = next(b for b in eye if abs(abs(b @ e_hat) - 1.0) > 1e-8)
        a = p - (p @ e_hat) * e_hat
        a_hat = a / np.linalg.norm(a)
        z_hat = np.cross(e_hat, a_hat)
    zeta = np.sqrt(ne**2 + rho**2) * z_hat
    return CgoFrame(eta, float(rho), rho * a_hat, zeta)


# --- multipliers ------------------------------------------------------------------------


def harmonic_exponent(kappa0, h: float, tol: float = 1e-15) -> np.ndarray:
    """Closest kappa (min-norm Newton) to kappa0 with sum_j cosh(kappa_j h) = d."""
    kappa = np.asarray(kappa0, dtype=complex).copy()
    d = kappa.size
    for _ in range(50):
        F = np.sum(np.cosh(kappa * h)) - d
        if abs(F) <= tol * d:
            break
        J = h * np.sinh(kappa * h)
        kappa -= np.conj(J) * F / np.sum(np.abs(J) ** 2)
    return kappa


def harmonic_frame_exponents(frame: CgoFrame, h: float, tol: float = 1e-15):
    """Discrete-harmonic kappa1, kappa2 near xi_j/2 with kappa1 + kappa2 = -i eta exactly."""
    k1 = frame.xi1 / 2
    k2 = frame.xi2 / 2
    target = k1 + k2
    d = k1.size
    for _ in range(50):
        F = np.array([np.sum(np.cosh(k1 * h)) - d, np.sum(np.cosh(k2 * h)) - d])
        if np.abs(F).max() <= tol * d:
            break
        J = np.vstack([h * np.sinh(k1 * h), -h * np.sinh(k2 * h)])
        step = np.linalg.lstsq(J, F, rcond=None)[0]  # min-norm; rank 1 when eta = 0
        k1 = k1 - step
        k2 = target - k1
    return k1, k2


@dataclass
class Multiplier:
    """Symbol of the conjugated operator on the (shifted) lattice of one grid."""

    grid: Grid
    xi: np.ndarray
    kappa: np.ndarray
    shift: np.ndarray | None
    scheme: str
    symbol: np.ndarray = field(repr=False)

    def reduce(self, f: np.ndarray) -> np.ndarray:
        """Physical quasi-periodic samples -> periodic factor."""
        if self.shift is None:
            return np.asarray(f, dtype=complex)
        return f * np.conj(bloch_phase(self.grid, self.shift))

    def lift(self, phi: np.ndarray) -> np.ndarray:
        if self.shift is None:
            return phi
        return phi * bloch_phase(self.grid, self.shift)

    def pole_mask(self) -> np.ndarray:
        ks = self.grid.shifted_wavenumbers(self.shift)
        kk = np.sqrt(sum(k**2 for k in ks))
        scale = kk**2 + np.linalg.norm(self.xi) * kk
        return np.abs(self.symbol) <= 1e-12 * scale

    def solve(self, phi_rhs: np.ndarray) -> np.ndarray:
        """Reduced-space inverse: phi with symbol * phi^ = rhs^."""
        fh = sfft.fftn(phi_rhs)
        poles = self.pole_mask()
        if poles.any():
            live = poles & (np.abs(fh) > 1e-14 * max(np.abs(fh).max(), 1e-300))
            if live.any():
                idx = tuple(np.argwhere(live)[0])
                k = [w[tuple(i if w.shape[j] > 1 else 0 for j, i in enumerate(idx))]
                     for w in self.grid.shifted_wavenumbers(self.shift)]
                raise PoleError(np.ravel(k), self.symbol[idx])
            fh = np.where(poles, 0.0, fh)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.where(poles, 0.0, fh / np.where(poles, 1.0, self.symbol))
        return sfft.ifftn(out)

    def apply(self, phi: np.ndarray) -> np.ndarray:
        return sfft.ifftn(self.symbol * sfft.fftn(phi))

    def gradient(self, phi: np.ndarray) -> list[np.ndarray]:
        fh = sfft.fftn(phi)
        return [sfft.ifftn(1j * k * fh) for k in self.grid.shifted_wavenumbers(self.shift)]

    def laplacian(self, phi: np.ndarray) -> np.ndarray:
        return sfft.ifftn(-self.grid.k_squared(self.shift) * sfft.fftn(phi))


def _symbol(grid: Grid, xi, kappa, shift, scheme):
    ks = grid.shifted_wavenumbers(shift)
    if scheme == "spectral":
        return -sum(k**2 for k in ks) + 1j * sum(x * k for x, k in zip(xi, ks))
    if scheme == "fd":
        h = grid.h
        return sum((2 * np.cosh(c * h + 1j * k * h) - 2) for c, k in zip(kappa, ks)) / h**2
    raise ValueError(f"unknown scheme {scheme!r}")


def shift_candidates(grid: Grid) -> list[np.ndarray]:
    return [np.array(c, float) * np.pi / grid.L for c in itertools.product((0, 1), repeat=grid.dim)]


def make_multiplier(grid: Grid, xi, shift="auto", scheme: str = "spectral", kappa=None) -> Multiplier:
    """Build the symbol. shift: None (plain lattice), a vector, or "auto" (best half-lattice shift)."""
    xi = np.asarray(xi, dtype=complex)
    if xi.size != grid.dim:
        raise DimensionError(f"xi has length {xi.size}, grid dim is {grid.dim}")
    if kappa is None:
        kappa = xi / 2 if scheme == "spectral" else harmonic_exponent(xi / 2, grid.h)
    kappa = np.asarray(kappa, dtype=complex)
    if isinstance(shift, str):
        if shift != "auto":
            raise ValueError(f"shift must be None, a vector or 'auto', got {shift!r}")
        best = None
        for cand in shift_candidates(grid)[1:]:
            sym = _symbol(grid, xi, kappa, cand, scheme)
            m = np.abs(sym).min()
            if best is None or m > best[0] * (1 + 1e-9):
                best = (m, cand, sym)
        _, beta, sym = best
    else:
        beta = None if shift is None else np.asarray(shift, float)
        sym = _symbol(grid, xi, kappa, beta, scheme)
    return Multiplier(grid, xi, kappa, beta, scheme, sym)


def apply_K_xi(f, xi, grid: Grid, shift=None, scheme: str = "spectral") -> np.ndarray:
    """w = K_xi f, i.e. the solution of Delta w + xi.grad w = f on the torus.

    f and w are physical samples on the periodic nodes. Frequencies where the
    symbol vanishes raise :class:`PoleError` unless f has no energy there.
    """
    xi = as_xi(xi)
    mult = make_multiplier(grid, xi, shift, scheme)
    f = grid.check(f)
    return mult.lift(mult.solve(mult.reduce(f)))


def kxi_residual(w, f, xi, grid: Grid, shift=None) -> float:
    """||Delta w + xi.grad w - f|| / ||f||, spectrally."""
    mult = make_multiplier(grid, as_xi(xi), shift)
    r = mult.apply(mult.reduce(w)) - mult.reduce(f)
    return float(np.linalg.norm(r) / max(np.linalg.norm(f), 1e-300))


# --- Neumann series ------------------------------------------------------------------------


@dataclass
class SeriesReport:
    terms: int
    ratio: float
    tail: float
    residual: float
    hs_norm: float | None = None
    hs1_norm: float | None = None
    rhs_hs_norm: float | None = None
    xi_norm: float = 0.0
    bound_ok: dict = field(default_factory=dict)


def _neumann(mult: Multiplier, phi0_rhs: np.ndarray, perturb, max_terms: int = 64, tol: float = 1e-12):
    """phi = sum_n T^n phi_0 with phi_0 = L^-1 rhs and T(phi) = -L^-1 perturb(phi)."""
    term = mult.solve(phi0_rhs)
    total = term.copy()
    norms = [np.linalg.norm(term)]
    if norms[0] == 0.0 or perturb is None:
        return total, SeriesReport(1, 0.0, 0.0, 0.0)
    ratio = 0.0
    for n in range(1, max_terms):
        term = -mult.solve(perturb(term))
        norms.append(np.linalg.norm(term))
        total += term
        if norms[-1] == 0.0:
            return total, SeriesReport(n + 1, 0.0, 0.0, 0.0)
        ratio = norms[-1] / norms[-2]
        recent = np.array(norms[-4:])
        rate = (recent[-1] / recent[0]) ** (1 / (len(recent) - 1))
        if n >= 3 and rate >= 1.0:
            raise DivergenceError(
                f"Neumann series diverges (contraction ratio {rate:.3f} >= 1 after {n + 1} terms); increase |xi|"
            )
        tail = norms[-1] * ratio / (1 - ratio) if ratio < 1 else np.inf
        if ratio < 0.5 and tail < tol * np.linalg.norm(total):
            return total, SeriesReport(n + 1, ratio, tail / np.linalg.norm(total), 0.0)
    raise DivergenceError(f"Neumann series did not converge in {max_terms} terms (last ratio {ratio:.3f}); increase |xi|")


def _potential_array(q, grid: Grid) -> np.ndarray:
    if q is None:
        return np.zeros(grid.shape)
    values = getattr(q, "values", q)
    if np.isscalar(values):
        return np.full(grid.shape, float(values))
    return grid.check(np.asarray(values))


def _hs(q, grid: Grid, s: int) -> float:
    if hasattr(q, "hs_norm") and getattr(q, "s", None) == s:
        return q.hs_norm
    return weighted_sobolev_norm(_potential_array(q, grid), grid, SobolevSpec(s))


def neumann_solve(q, xi, rhs, grid: Grid, s: int = 2, shift="auto", scheme: str = "spectral",
                  kappa=None, constants: CgoConstants = DEFAULT_CONSTANTS, norms: bool = False,
                  multiplier: Multiplier | None = None):
    """psi with L_kappa psi + q psi = rhs, by the Neumann series psi = sum (-K q)^n K rhs.

    q and rhs must already be compactly supported (cutoff-extended).
    Returns (psi as physical periodic samples, multiplier, report).
    """
    xi = as_xi(xi)
    qv = _potential_array(q, grid)
    rhs = grid.check(np.asarray(rhs))
    qn = _hs(q, grid, s) if np.any(qv) else 0.0
    xin = float(np.linalg.norm(xi))
    if xin < constants.C1 * qn:
        raise ParameterError(f"|xi| = {xin:.4g} < C1*||q||_H^{s} = {constants.C1 * qn:.4g}")
    mult = multiplier or make_multiplier(grid, xi, shift, scheme, kappa)
    perturb = (lambda phi: qv * phi) if np.any(qv) else None
    phi, rep = _neumann(mult, mult.reduce(rhs), perturb)
    fixed = mult.solve(mult.reduce(rhs) - qv * phi)
    rep.residual = float(np.linalg.norm(phi - fixed) / max(np.linalg.norm(phi), 1e-300))
    rep.xi_norm = xin
    if norms:
        rep.hs_norm = weighted_sobolev_norm(phi, grid, SobolevSpec(s), mult.shift)
        rep.hs1_norm = weighted_sobolev_norm(phi, grid, SobolevSpec(s + 1), mult.shift)
        rep.rhs_hs_norm = weighted_sobolev_norm(rhs, grid, SobolevSpec(s))
        rep.bound_ok = {
            "hs": rep.hs_norm <= constants.C2 * rep.rhs_hs_norm / xin,
            "hs1": rep.hs1_norm <= constants.C2 * rep.rhs_hs_norm,
        }
    return mult.lift(phi), mult, rep


# --- CGO solutions ------------------------------------------------------------------------


@dataclass
class CgoSolution:
    """u = exp(kappa.(x - origin)) (1 + psi) with psi stored as its periodic factor."""

    grid: Grid
    mult: Multiplier
    phi: np.ndarray
    origin: np.ndarray
    report: SeriesReport | None = None

    @property
    def xi(self) -> np.ndarray:
        return self.mult.xi

    @property
    def kappa(self) -> np.ndarray:
        return self.mult.kappa

    def psi(self, closed: bool = False) -> np.ndarray:
        if closed:
            return to_closed(self.phi, self.grid, self.mult.shift)
        return self.mult.lift(self.phi)

    def exponential(self, closed: bool = False) -> np.ndarray:
        arg = sum(c * (x - o) for c, x, o in zip(self.kappa, self.grid.coords(closed), self.origin))
        return np.exp(arg)

    def values(self, closed: bool = False) -> np.ndarray:
        return self.exponential(closed) * (1 + self.psi(closed))

    def psi_at(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        vals = interpolate(self.phi, self.grid, pts)
        if self.mult.shift is not None:
            vals = vals * np.exp(1j * pts @ self.mult.shift)
        return vals

    def at(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        return np.exp((pts - self.origin) @ self.kappa) * (1 + self.psi_at(pts))

    def trace(self) -> np.ndarray:
        from .boundary import boundary_layout

        return boundary_layout(self.grid).extract(self.values(closed=True))

    def conjugated_residual(self, q) -> np.ndarray:
        """exp(-kappa.x)(Delta + q)u on the periodic nodes, in the scheme's own operator."""
        qv = _potential_array(q, self.grid)
        r = self.mult.apply(self.phi) + qv * (self.mult.reduce(np.ones(self.grid.shape)) + self.phi)
        return self.mult.lift(r)

    def residual(self, q) -> float:
        """||(Delta + q) u|| / ||u|| over the box nodes."""
        mag = np.abs(self.exponential())
        r = mag * self.conjugated_residual(q)
        return float(np.linalg.norm(r) / np.linalg.norm(mag * (1 + self.psi())))


def _extended_potential(q, grid: Grid, margin: float | None) -> np.ndarray:
    qv = _potential_array(q, grid)
    if margin:
        qv = apply_cutoff(qv, grid, margin)
    return qv


def cgo_solution(q, xi, grid: Grid, s: int = 2, shift="auto", scheme: str = "spectral", kappa=None,
                 origin=None, margin: float | None = None,
                 constants: CgoConstants = DEFAULT_CONSTANTS, norms: bool = False) -> CgoSolution:
    """u = exp(xi.x/2)(1 + psi) solving (Delta + q) u = 0 in the box.

    ``origin`` moves the exponential's anchor (the plain form has origin 0);
    it only rescales u by a constant. With ``margin`` the potential is first
    multiplied by the cutoff.
    """
    xi = as_xi(xi)
    qe = _extended_potential(q, grid, margin)
    qn = _hs(q, grid, s) if margin is None else weighted_sobolev_norm(qe, grid, SobolevSpec(s))
    if np.any(qe) and np.linalg.norm(xi) < constants.C1 * qn:
        raise ParameterError(f"|xi| = {np.linalg.norm(xi):.4g} < C1*||q||_H^{s} = {constants.C1 * qn:.4g}")
    mult = make_multiplier(grid, xi, shift, scheme, kappa)
    perturb = (lambda phi: qe * phi) if np.any(qe) else None
    if perturb is None:
        phi = np.zeros(grid.shape, dtype=complex)
        rep = SeriesReport(0, 0.0, 0.0, 0.0)
    else:
        rhs = -mult.reduce(qe)
        phi, rep = _neumann(mult, rhs, perturb)
        fixed = mult.solve(rhs - qe * phi)
        rep.residual = float(np.linalg.norm(phi - fixed) / max(np.linalg.norm(phi), 1e-300))
    rep.xi_norm = float(np.linalg.norm(xi))
    if norms:
        rep.hs_norm = weighted_sobolev_norm(phi, grid, SobolevSpec(s), mult.shift)
        rep.hs1_norm = weighted_sobolev_norm(phi, grid, SobolevSpec(s + 1), mult.shift)
        rep.rhs_hs_norm = weighted_sobolev_norm(qe, grid, SobolevSpec(s))
        rep.bound_ok = {
            "hs": rep.hs_norm <= constants.C2 * rep.rhs_hs_norm / rep.xi_norm,
            "hs1": rep.hs1_norm <= constants.C2 * rep.rhs_hs_norm,
        }
    origin = np.zeros(grid.dim) if origin is None else np.asarray(origin, float)
    return CgoSolution(grid, mult, phi, origin, rep)


# --- the (v, w) pair ------------------------------------------------------------------------


@dataclass
class WSolution:
    """w = xi.x + psi_w solving Delta w + grad log(v^2).grad w = 0 on the cutoff plateau."""

    grid: Grid
    xi: np.ndarray
    mult: Multiplier
    phi: np.ndarray
    margin: float
    report: SeriesReport | None = None
    psi_v_max: float = 0.0

    def psi(self, closed: bool = False) -> np.ndarray:
        if closed:
            return to_closed(self.phi, self.grid, self.mult.shift)
        return self.mult.lift(self.phi)

    def values(self, closed: bool = False) -> np.ndarray:
        lin = sum(x * c for x, c in zip(self.xi, self.grid.coords(closed)))
        return lin + self.psi(closed)

    def gradient(self) -> list[np.ndarray]:
        return [x + self.mult.lift(g) for x, g in zip(self.xi, self.mult.gradient(self.phi))]

    def at(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        vals = interpolate(self.phi, self.grid, pts)
        if self.mult.shift is not None:
            vals = vals * np.exp(1j * pts @ self.mult.shift)
        return pts @ self.xi + vals

    def plateau(self) -> np.ndarray:
        return cutoff_profile(self.grid, self.margin) >= 1.0 - 1e-12


def default_margin(grid: Grid) -> float:
    return grid.L / 8


def cgo_w_solution(q, xi, grid: Grid, v: CgoSolution | None = None, s: int = 2,
                   margin: float | None = None, constants: CgoConstants = DEFAULT_CONSTANTS,
                   norms: bool = False):
    """(w, v): the second factor w = xi.x + psi_w of the product solution phi = v w.

    The coefficient b = 2 grad(psi_v)/(1 + psi_v) is cut off to the plateau,
    so w solves its equation exactly where the cutoff equals one.
    """
    xi = as_xi(xi)
    margin = default_margin(grid) if margin is None else margin
    qv = _potential_array(q, grid)
    qn = _hs(q, grid, s) if np.any(qv) else 0.0
    if np.any(qv) and np.linalg.norm(xi) < constants.C3 * qn:
        raise ParameterError(f"|xi| = {np.linalg.norm(xi):.4g} < C3*||q||_H^{s} = {constants.C3 * qn:.4g}")
    if v is None:
        v = cgo_solution(q, xi, grid, s=s, constants=constants)
    psi_v = v.psi()
    pmax = float(np.abs(psi_v).max())
    if pmax >= 0.5:
        raise NonvanishingError(f"|psi_v| reaches {pmax:.3f} >= 1/2, v may vanish; increase |xi|")
    mult = v.mult
    chi = cutoff_profile(grid, margin)
    grad_v = [mult.lift(g) for g in mult.gradient(v.phi)]
    b = [2 * chi * g / (1 + psi_v) for g in grad_v]
    if not any(np.any(c) for c in b):
        phi = np.zeros(grid.shape, dtype=complex)
        rep = SeriesReport(0, 0.0, 0.0, 0.0)
    else:
        rhs = -mult.reduce(sum(c * x for c, x in zip(b, xi)))

        def perturb(phi):
            return sum(c * g for c, g in zip(b, mult.gradient(phi)))

        phi, rep = _neumann(mult, rhs, perturb)
    rep.xi_norm = float(np.linalg.norm(xi))
    if norms:
        rep.hs_norm = weighted_sobolev_norm(phi, grid, SobolevSpec(s), mult.shift)
        rep.rhs_hs_norm = qn
        rep.bound_ok = {"hs": rep.hs_norm <= constants.C4 * qn}
    return WSolution(grid, xi, mult, phi, margin, rep, pmax), v


def w_residual(w: WSolution, v: CgoSolution) -> float:
    """Plateau residual of Delta w + grad log(v^2).grad w, relative to |xi|^2."""
    m = v.mult
    psi_v = v.psi()
    glog = [2 * k + 2 * m.lift(g) / (1 + psi_v) for k, g in zip(v.kappa, m.gradient(v.phi))]
    r = w.mult.lift(w.mult.laplacian(w.phi)) + sum(a * b for a, b in zip(glog, w.gradient()))
    region = w.plateau()
    scale = np.sum(np.abs(w.xi) ** 2) * np.sqrt(region.sum())
    return float(np.linalg.norm(r[region]) / scale)


def _v_derivatives(v: CgoSolution, q):
    """e^{-kappa x} times (v, grad v, (Delta+q) v) on the periodic nodes (spectral scheme)."""
    m = v.mult
    psi = v.psi()
    grads = [m.lift(g) for g in m.gradient(v.phi)]
    gv = [k * (1 + psi) + g for k, g in zip(v.kappa, grads)]
    return 1 + psi, gv, v.conjugated_residual(q)


def phi_product(v: CgoSolution, w: WSolution) -> np.ndarray:
    """phi = v w on the periodic nodes."""
    return v.values() * w.values()


def phi_residual(v: CgoSolution, w: WSolution, q, region: np.ndarray | None = None) -> float:
    """||(Delta + q)(v w)|| / ||v w|| on the plateau, via the product rule."""
    vv, gv, lv = _v_derivatives(v, q)
    wv = w.values()
    gw = w.gradient()
    lw = w.mult.lift(w.mult.laplacian(w.phi))
    r = wv * lv + 2 * sum(a * b for a, b in zip(gv, gw)) + vv * lw
    region = w.plateau() if region is None else region
    mag = np.abs(v.exponential())
    num = np.linalg.norm((mag * r)[region])
    den = np.linalg.norm((mag * vv * wv)[region])
    return float(num / den)


# --- theta interpolants ------------------------------------------------------------------------


@dataclass
class ThetaPair:
    v: CgoSolution
    w: WSolution
    z1: np.ndarray
    z2: np.ndarray
    v_z: np.ndarray
    w_z: np.ndarray

    def _theta(self, vx, wx, i):
        j = 1 - i
        return vx / self.v_z[i] * (wx - self.w_z[j]) / (self.w_z[i] - self.w_z[j])

    def at(self, points):
        vx, wx = self.v.at(points), self.w.at(points)
        return self._theta(vx, wx, 0), self._theta(vx, wx, 1)

    def fields(self, closed: bool = False):
        vx, wx = self.v.values(closed), self.w.values(closed)
        return self._theta(vx, wx, 0), self._theta(vx, wx, 1)

    def traces(self, v_trace: np.ndarray, w_trace: np.ndarray):
        """theta_1, theta_2 on the boundary nodes from precomputed traces of v and w."""
        return self._theta(v_trace, w_trace, 0), self._theta(v_trace, w_trace, 1)

    def kronecker_defect(self) -> float:
        t1, t2 = self.at(np.vstack([self.z1, self.z2]))
        return float(max(abs(t1[0] - 1), abs(t1[1]), abs(t2[0]), abs(t2[1] - 1)))


def theta_interpolants(v: CgoSolution, w: WSolution, z1, z2, threshold: float = 1e-8) -> ThetaPair:
    z1 = np.asarray(z1, float)
    z2 = np.asarray(z2, float)
    pts = np.vstack([z1, z2])
    v_z = v.at(pts)
    w_z = w.at(pts)
    if np.any(v_z == 0):
        raise NonvanishingError("v vanishes at an interpolation node")
    gap = abs(w_z[0] - w_z[1])
    if gap < threshold * max(1.0, np.abs(w_z).max()):
        raise SeparationError(f"|w(z1) - w(z2)| = {gap:.3e} is too small; increase Re(xi).e1")
    return ThetaPair(v, w, z1, z2, v_z, w_z)


@dataclass
class SeparationReport:
    ratio: float
    bound: float
    violated: bool
    xi_e1: float


def w_separation(w: WSolution, z1, z2, q_norm: float = 0.0, C: float = 1.0) -> SeparationReport:
    """|w(z2) - w(z1)| / |z2 - z1| against the lower bound Re(xi).e1 - C ||q||."""
    z1 = np.asarray(z1, float)
    z2 = np.asarray(z2, float)
    dist = np.linalg.norm(z2 - z1)
    if dist == 0:
        raise ParameterError("z1 and z2 coincide")
    wz = w.at(np.vstack([z1, z2]))
    ratio = float(abs(wz[1] - wz[0]) / dist)
    xe1 = float(w.xi[0].real)
    bound = xe1 - C * q_norm
    return SeparationReport(ratio, bound, ratio < bound, xe1)


def frames_to_bytes(frames) -> bytes:
    return b"".join(f.to_bytes() for f in frames)


def frames_from_bytes(blob: bytes) -> list[CgoFrame]:
    if len(blob) % 96:
        raise ValueError("frame stream length is not a multiple of 96 bytes")
    return [CgoFrame.from_bytes(blob[i:i + 96]) for i in range(0, len(blob), 96)]


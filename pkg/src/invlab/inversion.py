"""Potential reconstruction from DtN differences and point-source recovery.

The potential step evaluates the boundary pairing <(Lambda_1 - Lambda_2) f1, f2>
on traces of exponential solutions with exponents kappa_1 + kappa_2 = -i eta,
which by the discrete Alessandrini identity equals

    sum_x m_x (q2 - q1) v1 v2 = exp(i eta.c) (q2 - q1)^(eta) + volume term.

The exponentials are anchored at the box centre c (this only rescales each
trace by a constant), which keeps their dynamic range symmetric.

The source step uses reciprocity: for every discrete solution v of the
homogeneous equation, <Phi(0), v> = a v(z) up to the quadrature error of the
analytic Newtonian part.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from scipy.optimize import minimize

from .boundary import boundary_layout
from .cgo import CgoConstants, DEFAULT_CONSTANTS, cgo_solution, harmonic_exponent, harmonic_frame_exponents, make_frame
from .dtn import DtnMap, linear_norm, node_masses
from .errors import DataIntegrityError, DegenerateProbeError, ParameterError
from .forward import DirichletSolver, closed_potential
from .grid import Grid, _lagrange4, fourier_transform_at
from .norms import negative_sobolev_norm


@dataclass
class ReconstructionParams:
    s: int = 2
    d: int = 3
    M: float = 1.0
    rho: float = 5.0
    R: float | None = None
    C_log: float = 1.0
    mode: str = "born"
    constants: CgoConstants = DEFAULT_CONSTANTS

    def __post_init__(self):
        if int(self.s) != self.s or int(self.d) != self.d:
            raise ParameterError("s and d must be integers")
        if not self.s > self.d / 2:
            raise ParameterError(f"need s > d/2, got s={self.s}, d={self.d}")
        if self.mode not in ("born", "oracle"):
            raise ParameterError(f"mode must be 'born' or 'oracle', got {self.mode!r}")
        if not self.C_log > 0:
            raise ParameterError(f"C_log must be positive, got {self.C_log}")
        if self.R is not None and not self.R > 0:
            raise ParameterError(f"R must be positive, got {self.R}")
        self.check_rho(self.rho)

    @property
    def rho_min(self) -> float:
        return self.constants.C1 * self.M + 1

    def check_rho(self, rho: float):
        if rho < self.rho_min * (1 - 1e-12):
            raise ParameterError(f"rho = {rho} is below C1*M + 1 = {self.rho_min}")


# --- the q-hat estimator ----------------------------------------------------------------


@dataclass
class QHatEstimate:
    eta: np.ndarray
    value: complex
    pairing: complex
    volume: complex | None = None
    target: complex | None = None


def exponential_trace(kappa, grid: Grid, origin=None) -> np.ndarray:
    lay = boundary_layout(grid)
    origin = grid.center if origin is None else origin
    return np.exp((lay.points - origin) @ kappa)


def estimate_q_hat(dtn1: DtnMap, dtn2: DtnMap, frame, q1=None, q2=None,
                   params: ReconstructionParams | None = None, details: bool = False,
                   delta_linear: np.ndarray | None = None):
    """Estimate (q2 - q1)^(eta) from the linear parts of two DtN maps.

    born: traces of the exact discrete exponentials exp(kappa_j.(x - c)).
    oracle: traces of the discrete CGO solutions for q1 and q2 (needs both).
    """
    params = params or ReconstructionParams()
    params.check_rho(frame.rho)
    grid = dtn1.grid
    lay = boundary_layout(grid)
    c = grid.center
    k1, k2 = harmonic_frame_exponents(frame, grid.h)
    if params.mode == "oracle":
        if q2 is None:
            raise ParameterError("oracle mode needs both potentials")
        kw = dict(grid=grid, s=params.s, scheme="fd", origin=c, constants=params.constants)
        u1 = cgo_solution(q1, frame.xi1, kappa=k1, **kw)
        u2 = cgo_solution(q2, frame.xi2, kappa=k2, **kw)
        v1, v2 = u1.values(closed=True), u2.values(closed=True)
        f1, f2 = lay.extract(v1), lay.extract(v2)
    else:
        f1, f2 = exponential_trace(k1, grid, c), exponential_trace(k2, grid, c)
    dL = delta_linear if delta_linear is not None else dtn1.linear - dtn2.linear
    pairing = complex(f2 @ (lay.weights * (dL @ f1)))
    phase = np.exp(-1j * frame.eta @ c)
    value = pairing * phase
    if not details:
        return value
    est = QHatEstimate(frame.eta, value, pairing)
    if q2 is not None:
        dq = _values(q2, grid) - _values(q1, grid)
        est.target = fourier_transform_at(dq, grid, frame.eta)
        if params.mode == "oracle":
            prod = closed_potential(dq, grid) * v1 * v2
            est.volume = complex(np.sum(node_masses(grid) * prod) * phase) - est.target
    return est


def _values(q, grid: Grid) -> np.ndarray:
    if q is None:
        return np.zeros(grid.shape)
    v = getattr(q, "values", q)
    return np.broadcast_to(np.asarray(v, float), grid.shape)


# --- truncation radius ---------------------------------------------------------------------


def _radius_equation(R, epsilon, s, d, C):
    return (2 * s - d) * np.log(R) + C * R + 2 * np.log(epsilon)


def choose_truncation_radius(epsilon: float, s: int = 3, d: int = 3, C: float = 1.0) -> float:
    """The root R0 of R^(2s-d) exp(C R) = epsilon^-2 (monotone bisection in log form)."""
    if not 0 < epsilon < 1:
        raise ParameterError(f"epsilon must lie in (0, 1), got {epsilon}")
    if not 2 * s - d > 0:
        raise ParameterError(f"need 2s - d > 0, got s={s}, d={d}")
    if not C > 0:
        raise ParameterError(f"C must be positive, got {C}")
    lo, hi = 1e-300, 1.0
    while _radius_equation(hi, epsilon, s, d, C) < 0:
        lo, hi = hi, 2 * hi
    for _ in range(2000):
        mid = 0.5 * (lo + hi)
        if _radius_equation(mid, epsilon, s, d, C) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return 0.5 * (lo + hi)


def radius_lower_bound(epsilon: float, s: int, d: int, C: float) -> float:
    return -2 * np.log(epsilon) / (C + (2 * s - d) / np.e)


# --- potential reconstruction -------------------------------------------------------------


@dataclass
class Reconstruction:
    grid: Grid
    values: np.ndarray
    R: float
    rho: float
    mode: str
    etas: np.ndarray
    q_hat: np.ndarray
    epsilon: float | None
    tail_estimate: float
    imag_residue: float
    estimates: list = field(default_factory=list, repr=False)

    def rows(self):
        for eta, qh in zip(self.etas, self.q_hat):
            yield (*eta, qh.real, qh.imag)


def lattice_frequencies(grid: Grid, R: float) -> np.ndarray:
    """Dual-lattice points 2 pi m / L with |eta| <= R, sorted by (|m|^2, m)."""
    mmax = int(np.floor(R * grid.L / (2 * np.pi)))
    mmax = min(mmax, grid.n // 2 - 1)
    ms = [m for m in itertools.product(range(-mmax, mmax + 1), repeat=grid.dim)
          if np.linalg.norm(m) * 2 * np.pi / grid.L <= R]
    ms.sort(key=lambda m: (sum(x * x for x in m), m))
    return np.array(ms, dtype=float).reshape(-1, grid.dim) * 2 * np.pi / grid.L


def _half(m) -> bool:
    """Lexicographically non-negative lattice points (one of each +-pair)."""
    for x in m:
        if x > 0:
            return True
        if x < 0:
            return False
    return True


def reconstruct_potential_diff(dtn1: DtnMap, dtn2: DtnMap, q1=None, params: ReconstructionParams | None = None,
                               q2=None, R: float | None = None) -> Reconstruction:
    """Delta q_est = inverse transform of the estimated q-hat on the lattice ball B_R.

    R: explicit, else params.R, else chosen from the measured ||Lambda_1 - Lambda_2||_*.
    """
    params = params or ReconstructionParams()
    grid = dtn1.grid
    if grid.dim != 3:
        raise ParameterError("frequency slicing needs dim = 3")
    dL = dtn1.linear - dtn2.linear
    eps = None
    R = R if R is not None else params.R
    if R is None:
        eps = linear_norm(dtn1 - dtn2)
        R = choose_truncation_radius(eps, params.s, params.d, params.C_log)
    etas = lattice_frequencies(grid, R)
    spacing = 2 * np.pi / grid.L
    coeffs = np.zeros(grid.shape, dtype=complex)
    kept, vals, ests = [], [], []
    for eta in etas:
        m = np.rint(eta / spacing).astype(int)
        if not _half(m):
            continue
        est = estimate_q_hat(dtn1, dtn2, make_frame(eta, params.rho), q1, q2, params, details=True, delta_linear=dL)
        value = est.value.real if not m.any() else est.value
        ests.append(est)
        for sign in (1, -1) if m.any() else (1,):
            mm = sign * m
            v = value if sign == 1 else np.conj(value)
            coeffs[tuple(mm % grid.n)] = v
            kept.append(mm * spacing)
            vals.append(v)
    field_values = sfft.ifftn(coeffs) * coeffs.size / grid.L**grid.dim
    imag = float(np.abs(field_values.imag).max() / max(np.abs(field_values.real).max(), 1e-300))
    tail = params.C_log * params.M**2 / R ** (2 * params.s - params.d)
    order = np.lexsort(np.array(kept).T[::-1]) if kept else []
    return Reconstruction(grid, field_values.real, R, params.rho, params.mode,
                          np.array(kept)[order] if kept else np.zeros((0, 3)),
                          np.array(vals)[order] if kept else np.zeros(0, complex),
                          eps, tail, imag, ests)


def potential_error(est: np.ndarray, truth: np.ndarray, grid: Grid, s: int) -> float:
    """||est - truth||_{H^-s}."""
    return negative_sobolev_norm(np.asarray(est) - np.asarray(truth), grid, s)


# --- source recovery -----------------------------------------------------------------------


@dataclass
class SourceEstimate:
    a_hat: complex
    z_hat: np.ndarray
    residual: float
    sensitivity: np.ndarray
    pairings: np.ndarray = field(repr=False, default=None)
    starts: int = 27

    def __post_init__(self):
        self.z_hat = np.asarray(self.z_hat, float)
        if self.residual < 0:
            raise ValueError("residual must be non-negative")


def default_probe_parameters(ts=(4.0, 8.0, 16.0)) -> list[np.ndarray]:
    """t (e_i + i e_j) for the index pairs (0,1), (1,2), (2,0), (0,2)."""
    eye = np.eye(3)
    pairs = [(0, 1), (1, 2), (2, 0), (0, 2)]
    return [t * (eye[i] + 1j * eye[j]) for t in ts for i, j in pairs]


@dataclass
class ProbeFamily:
    grid: Grid
    values: np.ndarray  # (m, n+1, ..., n+1) closed-node discrete solutions
    traces: np.ndarray  # (m, N_B)
    labels: list

    def at(self, z) -> np.ndarray:
        """All probes at one point z, by tensor cubic interpolation (as in interpolate_closed)."""
        g = self.grid
        s = np.asarray(z, float) / g.h
        base = np.clip(np.floor(s).astype(np.int64) - 1, 0, g.n - 3)
        block = self.values[(slice(None),) + tuple(slice(b, b + 4) for b in base)]
        for t in (s - base)[::-1]:  # contract the last axis first
            block = block @ _lagrange4(np.array([t]))[0]
        return block


def build_probes(q, grid: Grid, xis=None, constant: bool = True, solver: DirichletSolver | None = None) -> ProbeFamily:
    """Discrete homogeneous solutions with exponential (and constant) boundary data."""
    solver = solver or DirichletSolver(grid, q)
    lay = solver.layout
    xis = default_probe_parameters() if xis is None else xis
    data, labels = [], []
    for xi in xis:
        kappa = harmonic_exponent(np.asarray(xi) / 2, grid.h)
        data.append(exponential_trace(kappa, grid))
        labels.append(np.asarray(xi))
    if constant:
        data.append(np.ones(lay.size))
        labels.append("const")
    traces = np.array(data)
    values = np.array([solver.solve(f) for f in traces])
    return ProbeFamily(grid, values, traces, labels)


def _profile(pairings, vz):
    """Closed-form a(z) and residual for p_m ~ a v_m(z)."""
    den = np.sum(np.abs(vz) ** 2)
    num = np.sum(np.conj(vz) * pairings)
    a = num / den if den > 0 else 0.0
    res = float(np.sum(np.abs(pairings - a * vz) ** 2))
    return a, res, den


def recover_source(dtn_measured: DtnMap, q_est, probes: ProbeFamily | None = None, margin: float = 0.0,
                   solver: DirichletSolver | None = None, starts: int = 3) -> SourceEstimate:
    """Least-squares fit of <Phi(0), v_m> = a v_m(z) over (a, z); a eliminated in closed form."""
    grid = dtn_measured.grid
    lay = boundary_layout(grid)
    if probes is None:
        probes = build_probes(q_est, grid, solver=solver)
    offset = dtn_measured.offset
    pairings = np.array([lay.pair(offset, f) for f in probes.traces])
    scale = np.array([np.abs(v).max() for v in probes.values])
    p = pairings / scale

    def vz(z):
        return probes.at(z) / scale

    def objective(z):
        return _profile(p, vz(z))[1]

    lo = max(margin, grid.h)
    hi = grid.L - lo
    ticks = lo + (hi - lo) * (np.arange(starts) + 0.5) / starts
    best = None
    for z0 in itertools.product(ticks, repeat=grid.dim):
        res = minimize(objective, np.array(z0), method="L-BFGS-B", bounds=[(lo, hi)] * grid.dim,
                       options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 500})
        cand = (float(res.fun), tuple(np.round(res.x, 12)), res.x)
        if best is None or cand[:2] < best[:2]:
            best = cand
    fun, _, z_hat = best
    a_hat, res, den = _profile(p, vz(z_hat))
    if den <= 1e-12 * np.sum(np.abs(p) ** 2):
        raise DegenerateProbeError("all probes vanish near the optimum; use a different probe family")
    if margin and not grid.contains(z_hat, margin + grid.h):
        warnings.warn(f"source estimate {z_hat} lies on the margin of the domain", stacklevel=2)
    sens = _sensitivity(objective, z_hat, grid.h, res, p.size)
    return SourceEstimate(complex(a_hat), z_hat, float(res), sens, pairings, starts**grid.dim)


def _sensitivity(objective, z, h, res, m):
    """Diagonal covariance proxy sigma^2 / (H_ii / 2) from a finite-difference Hessian."""
    d = z.size
    out = np.empty(d)
    f0 = objective(z)
    sigma2 = res / max(m - d - 2, 1)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h / 4
        hii = (objective(z + e) - 2 * f0 + objective(z - e)) / (h / 4) ** 2
        out[i] = sigma2 / (hii / 2) if hii > 0 else np.inf
    return out


# --- joint pipeline -------------------------------------------------------------------------


@dataclass
class JointResult:
    q_est: np.ndarray
    reconstruction: Reconstruction
    source: SourceEstimate
    report: dict


def joint_recovery(dtn_measured: DtnMap, dtn_reference: DtnMap, q1, params: ReconstructionParams,
                   R: float | None = None, margin: float = 0.0, symmetry_tol: float = 1e-8) -> JointResult:
    """Potential first (linear part), then the source with the recovered potential."""
    if not params.s > params.d / 2 + 1:
        raise ParameterError(f"the joint problem needs s > d/2 + 1, got s={params.s}")
    defect = dtn_measured.symmetry_defect()
    if defect > symmetry_tol:
        raise DataIntegrityError(f"measured linear part is not symmetric (defect {defect:.3e})")
    rec = reconstruct_potential_diff(dtn_reference, dtn_measured, q1, params, R=R)
    q_est = _values(q1, dtn_measured.grid) + rec.values
    src = recover_source(dtn_measured, q_est, margin=margin)
    report = {
        "R": rec.R,
        "rho": rec.rho,
        "mode": rec.mode,
        "epsilon_measured": rec.epsilon,
        "frequencies": len(rec.etas),
        "tail_estimate": rec.tail_estimate,
        "imag_residue": rec.imag_residue,
        "source_residual": src.residual,
        "symmetry_defect": defect,
    }
    return JointResult(q_est, rec, src, report)

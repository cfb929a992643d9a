"""Finite-difference Schroedinger solver on the box and discrete Neumann traces.

Discretization: closed nodes i = 0..n per axis, the boundary layer holds the
Dirichlet data and interior nodes satisfy the 7-point (5-point in 2D) equation
Delta_h u + q u = g. The normal flux at a boundary node is the *variational*
one: the boundary row of the discrete energy

    E(u, v) = sum_edges c_e (du)(dv) - sum_nodes m_x q_x u_x v_x,

divided by the node's surface weight. Edge weights c_e = h^(d-2) times the
fraction of the adjacent cells inside the box, masses m_x = h^d times the same
fraction for the node. With this choice sum_B s_b Phi(f)_b g_b = E(u_f, v) for
every v matching g on the boundary, so the discrete Green and Alessandrini
identities hold exactly, and the flux is a second-order normal derivative on
face interiors.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .boundary import BoundaryLayout, boundary_layout
from .errors import GeometryError, KernelError, NumericalError, ParameterError
from .grid import Grid, to_closed
from .norms import apply_cutoff, sobolev_norm

log = logging.getLogger(__name__)

# int_{[-1/2,1/2]^3} |x|^-1 dx and int_{[-1/2,1/2]^2} log|x| dx
_CUBE_INV_R = 2.380077363979553
_SQUARE_LOG_R = -1.0611754268825244

DIRECT_LIMIT = 40_000  # interior unknowns above which the Krylov path is used


# --- domain types -------------------------------------------------------------


@dataclass
class Potential:
    """A real potential sampled on the periodic nodes, vanishing near the faces."""

    grid: Grid
    values: np.ndarray
    s: int = 2
    bound_M: float = 1.0
    margin: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.grid.check(self.values), dtype=float)
        if self.bound_M < 1:
            raise ParameterError(f"bound_M must be >= 1, got {self.bound_M}")
        if self.margin is not None:
            near = _near_faces(self.grid, self.margin)
            peak = np.abs(self.values).max(initial=0.0)
            if peak and np.abs(self.values[near]).max(initial=0.0) > 1e-13 * peak:
                raise GeometryError("potential does not vanish within the cutoff margin")
        norm = self.hs_norm
        if norm > self.bound_M * (1 + 1e-12):
            raise ParameterError(f"||q||_H^{self.s} = {norm:.4g} exceeds bound M = {self.bound_M}")

    @classmethod
    def from_values(cls, grid, values, margin, s=2, bound_M=None):
        """Apply the cutoff and build; bound_M defaults to max(1, measured norm)."""
        v = apply_cutoff(np.asarray(values, float), grid, margin)
        if bound_M is None:
            bound_M = max(1.0, sobolev_norm(v, grid, s))
        return cls(grid, v, s, bound_M, margin)

    @cached_property
    def hs_norm(self) -> float:
        return sobolev_norm(self.values, self.grid, self.s)

    @property
    def closed(self) -> np.ndarray:
        return to_closed(self.values, self.grid)


@dataclass(frozen=True)
class PointSource:
    amplitude: complex
    position: tuple

    def __post_init__(self):
        if self.amplitude == 0:
            raise ParameterError("source amplitude must be nonzero")
        object.__setattr__(self, "position", tuple(float(x) for x in self.position))

    @property
    def z(self) -> np.ndarray:
        return np.asarray(self.position)

    def validate(self, grid: Grid, margin: float = 0.0):
        if len(self.position) != grid.dim:
            raise GeometryError(f"source position has {len(self.position)} coordinates, grid is {grid.dim}-d")
        if not grid.contains(self.z, 2 * margin):
            raise GeometryError(f"source at {self.position} is within 2*margin={2 * margin} of the boundary")


def _near_faces(grid: Grid, margin: float) -> np.ndarray:
    near = np.zeros(grid.shape, bool)
    for x in grid.coords():
        near = near | (x <= margin) | (x >= grid.L - margin)
    return near


def closed_potential(q, grid: Grid) -> np.ndarray:
    """Potential -> closed-node samples. Accepts Potential, scalars, periodic or closed arrays."""
    if isinstance(q, Potential):
        return q.closed
    if q is None:
        return np.zeros(grid.closed_shape)
    q = np.asarray(q, float)
    if q.ndim == 0:
        return np.full(grid.closed_shape, float(q))
    if q.shape == grid.closed_shape:
        return q
    return to_closed(grid.check(q), grid)


# --- fundamental solution -------------------------------------------------------


def newton_kernel(x: np.ndarray, z, grid: Grid) -> np.ndarray:
    """G0(x - z) with Delta G0 = delta; nodes hitting z get the cell average."""
    r = np.linalg.norm(np.asarray(x, float) - np.asarray(z, float), axis=-1)
    h = grid.h
    if grid.dim == 3:
        safe = np.where(r > 0, r, 1.0)
        return np.where(r > 1e-14 * h, -1.0 / (4 * np.pi * safe), -_CUBE_INV_R / (4 * np.pi * h))
    safe = np.where(r > 0, r, 1.0)
    return np.where(r > 1e-14 * h, np.log(safe) / (2 * np.pi), (np.log(h) + _SQUARE_LOG_R) / (2 * np.pi))


def newton_kernel_gradient(x: np.ndarray, z) -> np.ndarray:
    d = np.asarray(x, float) - np.asarray(z, float)
    r = np.linalg.norm(d, axis=-1)[..., None]
    if d.shape[-1] == 3:
        return d / (4 * np.pi * r**3)
    return d / (2 * np.pi * r**2)


# --- the discrete operator -------------------------------------------------------


def energy_matrix(grid: Grid, q_closed: np.ndarray) -> sp.csr_matrix:
    """Sparse matrix of E(u, v) over all closed nodes (row-major order)."""
    n, d, h = grid.n, grid.dim, grid.h
    shape = grid.closed_shape
    idx = np.indices(shape).reshape(d, -1).T
    at_face = (idx == 0) | (idx == n)
    frac_node = np.prod(np.where(at_face, 0.5, 1.0), axis=1)
    rows, cols, vals = [], [], []
    diag = np.zeros(idx.shape[0])
    for t in range(d):
        ok = idx[:, t] < n
        a = np.flatnonzero(ok)
        nb = idx[ok].copy()
        nb[:, t] += 1
        b = np.ravel_multi_index(nb.T, shape)
        others = [u for u in range(d) if u != t]
        frac = np.prod(np.where(at_face[a][:, others], 0.5, 1.0), axis=1)
        c = frac * h ** (d - 2)
        rows += [a, b]
        cols += [b, a]
        vals += [-c, -c]
        np.add.at(diag, a, c)
        np.add.at(diag, b, c)
    diag -= h**d * frac_node * q_closed.ravel()
    rows.append(np.arange(idx.shape[0]))
    cols.append(np.arange(idx.shape[0]))
    vals.append(diag)
    m = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(idx.shape[0],) * 2)
    return m


class DirichletSolver:
    """Factorized Dirichlet problem Delta_h u + q u = g, u = f on the boundary."""

    def __init__(self, grid: Grid, q=None, tol: float = 1e-13):
        self.grid = grid
        self.q_closed = closed_potential(q, grid)
        self.tol = tol
        self.layout: BoundaryLayout = boundary_layout(grid)
        self.E = energy_matrix(grid, self.q_closed)
        bmask = self.layout.mask.ravel()
        self.B = np.flatnonzero(bmask)
        self.I = np.flatnonzero(~bmask)
        E = self.E.tocsr()
        self.E_II = E[self.I][:, self.I].tocsc()
        self.E_IB = E[self.I][:, self.B].tocsr()
        self.E_BI = E[self.B][:, self.I].tocsr()
        self.E_BB = E[self.B][:, self.B].tocsr()
        self.q_zero = not np.any(self.q_closed)

    # -- linear algebra on interior unknowns --

    @cached_property
    def _dst_eigs(self) -> np.ndarray:
        n, d, h = self.grid.n, self.grid.dim, self.grid.h
        k = np.arange(1, n)
        lam1 = 4 * np.sin(np.pi * k / (2 * n)) ** 2
        lam = 0.0
        for j in range(d):
            shp = [1] * d
            shp[j] = n - 1
            lam = lam + lam1.reshape(shp)
        return lam * h ** (d - 2)

    def _poisson_solve(self, b: np.ndarray) -> np.ndarray:
        """Exact inverse of the q = 0 interior operator via DST-I."""
        shp = (self.grid.n - 1,) * self.grid.dim
        cols = b.reshape(-1, 1) if b.ndim == 1 else b
        out = np.empty_like(cols)
        axes = tuple(range(1, self.grid.dim + 1))
        batch = cols.T.reshape((-1,) + shp)
        sol = sfft.idstn(sfft.dstn(batch, type=1, axes=axes) / self._dst_eigs, type=1, axes=axes)
        out[...] = sol.reshape(cols.shape[1], -1).T
        return out.reshape(b.shape)

    @cached_property
    def _lu(self):
        try:
            return spla.splu(self.E_II, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise KernelError(f"Dirichlet operator is singular: {exc}") from exc

    def _krylov_solve(self, b: np.ndarray) -> np.ndarray:
        A = self.E_II
        M = spla.LinearOperator(A.shape, matvec=self._poisson_solve, dtype=float)
        x, info = spla.gmres(A, b, M=M, rtol=self.tol, atol=0.0, restart=60, maxiter=20)
        if info != 0:
            raise NumericalError(f"GMRES did not converge (info={info})")
        return x

    def solve_interior(self, rhs: np.ndarray) -> np.ndarray:
        if np.iscomplexobj(rhs):
            return self.solve_interior(rhs.real) + 1j * self.solve_interior(rhs.imag)
        if self.q_zero:
            return self._poisson_solve(rhs)
        if self.I.size <= DIRECT_LIMIT:
            out = self._lu.solve(np.asarray(rhs, float))
            if not np.all(np.isfinite(out)):
                raise KernelError("Dirichlet operator is singular (non-finite solve)")
            return out
        if rhs.ndim == 1:
            return self._krylov_solve(rhs)
        return np.column_stack([self._krylov_solve(c) for c in rhs.T])

    # -- public --

    def solve(self, f=None, g=None) -> np.ndarray:
        """Closed-node solution with boundary values f and interior right-hand side g.

        f: boundary trace (N_B,) or None for zero; g: closed-node array or None.
        """
        lay = self.layout
        h, d = self.grid.h, self.grid.dim
        dtype = np.result_type(f if f is not None else 0.0, g if g is not None else 0.0, float)
        rhs = np.zeros(self.I.size, dtype=dtype)
        if g is not None:
            # E_II u = -h^d g - E_IB f
            rhs -= h**d * np.asarray(g).ravel()[self.I]
        if f is not None:
            rhs -= self.E_IB @ lay.check(f)
        u = np.zeros(int(np.prod(self.grid.closed_shape)), dtype=dtype)
        u[self.I] = self.solve_interior(rhs)
        if f is not None:
            u[self.B] = f
        return u.reshape(self.grid.closed_shape)

    def flux(self, u: np.ndarray) -> np.ndarray:
        """Boundary rows of E u (integrated flux per boundary node)."""
        u = self.grid.check(u, closed=True).ravel()
        return self.E_BI @ u[self.I] + self.E_BB @ u[self.B]

    def neumann_trace(self, u: np.ndarray) -> np.ndarray:
        return self.flux(u) / self.layout.weights

    def residual(self, u: np.ndarray, g=None) -> float:
        """Relative interior residual of Delta_h u + q u = g."""
        u = self.grid.check(u, closed=True).ravel()
        r = self.E[self.I] @ u
        scale = np.abs(self.E[self.I]).max() * np.abs(u).max() if np.any(u) else 1.0
        if g is not None:
            r = r + self.grid.h**self.grid.dim * np.asarray(g).ravel()[self.I]
            scale = max(scale, self.grid.h**self.grid.dim * np.abs(g).max())
        return float(np.abs(r).max() / (scale or 1.0))

    def schur_complement(self, batch: int = 256) -> np.ndarray:
        """Dense energy-form DtN: E_BB - E_BI E_II^-1 E_IB (symmetric, N_B x N_B)."""
        nb = self.B.size
        out = self.E_BB.toarray()
        cols = np.flatnonzero(np.diff(self.E_IB.tocsc().indptr))  # boundary nodes with interior neighbours
        E_IB = self.E_IB.tocsc()[:, cols]
        for start in range(0, cols.size, batch):
            sl = slice(start, start + batch)
            X = self.solve_interior(E_IB[:, sl].toarray())
            out[:, cols[sl]] -= self.E_BI @ X
        out = 0.5 * (out + out.T)
        assert out.shape == (nb, nb)
        return out


# --- operations -------------------------------------------------------------------


@dataclass
class KernelReport:
    eigenvalue: float
    threshold: float
    trivial: bool
    iterations: int = 0

    def __str__(self):
        verdict = "trivial kernel" if self.trivial else "NON-TRIVIAL kernel"
        return f"smallest |eigenvalue| of Delta+q: {self.eigenvalue:.6g} (threshold {self.threshold:.3g}) -> {verdict}"


def check_kernel_trivial(q, grid: Grid, threshold: float | None = None) -> KernelReport:
    """Smallest-magnitude eigenvalue of the discrete Dirichlet operator Delta_h + q."""
    solver = DirichletSolver(grid, q)
    h, d = grid.h, grid.dim
    A = (-solver.E_II / h**d).tocsc()  # Delta_h + q on interior nodes
    if threshold is None:
        threshold = 1e-8 * h**-2
    v0 = np.ones(A.shape[0])
    try:
        if A.shape[0] <= 400:
            vals = np.linalg.eigvalsh(A.toarray())
        else:
            vals = spla.eigsh(A, k=1, sigma=0.0, which="LM", v0=v0, return_eigenvectors=False, maxiter=5000)
    except RuntimeError:
        # exactly singular factorization: the kernel is non-trivial
        vals = spla.eigsh(A, k=1, sigma=threshold, which="LM", v0=v0, return_eigenvectors=False, maxiter=5000)
    except spla.ArpackNoConvergence as exc:
        raise NumericalError(f"eigen-solver did not converge after {exc.args}") from exc
    lam = float(vals[np.argmin(np.abs(vals))])
    return KernelReport(lam, threshold, abs(lam) > threshold)


def solve_dirichlet(q, f, grid: Grid, solver: DirichletSolver | None = None) -> np.ndarray:
    solver = solver or DirichletSolver(grid, q)
    return solver.solve(f)


@dataclass
class SourceSolution:
    """u = a G0(. - z) + u_reg on the closed nodes."""

    grid: Grid
    source: PointSource
    u_reg: np.ndarray
    solver: DirichletSolver = field(repr=False)

    def singular_part(self, points: np.ndarray) -> np.ndarray:
        return self.source.amplitude * newton_kernel(points, self.source.z, self.grid)

    def values(self) -> np.ndarray:
        return self.u_reg + self.singular_part(self.grid.mesh(closed=True))

    def neumann_trace(self) -> np.ndarray:
        lay = self.solver.layout
        grad = newton_kernel_gradient(lay.points, self.source.z)
        analytic = self.source.amplitude * np.sum(grad * lay.outward_normal_sum, axis=1)
        return self.solver.neumann_trace(self.u_reg) + analytic


def solve_with_source(q, source: PointSource, f, grid: Grid, margin: float = 0.0,
                      solver: DirichletSolver | None = None) -> SourceSolution:
    """(Delta + q) u = a delta_z with u = f on the boundary, by singularity subtraction.

    u_reg solves (Delta_h + q) u_reg = -a q G0(. - z) with data f - a G0(. - z).
    """
    source.validate(grid, margin)
    solver = solver or DirichletSolver(grid, q)
    lay = solver.layout
    a, z = source.amplitude, source.z
    g0 = newton_kernel(grid.mesh(closed=True), z, grid)
    rhs = -a * solver.q_closed * g0
    data = -a * newton_kernel(lay.points, z, grid)
    if f is not None:
        data = data + lay.check(f)
    u_reg = solver.solve(data, rhs if np.any(rhs) else None)
    return SourceSolution(grid, source, u_reg, solver)


def spread_delta(grid: Grid, z) -> np.ndarray:
    """Multilinear discrete delta on the closed nodes (integrates to 1 with weight h^d)."""
    out = np.zeros(grid.closed_shape)
    t = np.asarray(z, float) / grid.h
    base = np.floor(t).astype(int)
    frac = t - base
    for corner in np.ndindex(*(2,) * grid.dim):
        w = np.prod([f if c else 1 - f for f, c in zip(frac, corner)])
        out[tuple(base + np.array(corner))] += w
    return out / grid.h**grid.dim


def solve_with_regularized_delta(q, source: PointSource, f, grid: Grid,
                                 solver: DirichletSolver | None = None) -> np.ndarray:
    """Test oracle: direct solve with a multilinear grid delta."""
    solver = solver or DirichletSolver(grid, q)
    return solver.solve(f, source.amplitude * spread_delta(grid, source.z))


def neumann_trace(u, grid: Grid, q=None, solver: DirichletSolver | None = None, method: str = "variational"):
    """Outward normal derivative on the boundary nodes.

    ``u`` is a closed-node array or a :class:`SourceSolution`. ``method`` is
    "variational" (energy-consistent flux, used by the DtN map) or "fd4"
    (one-sided fourth-order differences; edge/corner nodes average the faces).
    """
    if isinstance(u, SourceSolution):
        if method == "variational":
            return u.neumann_trace()
        lay = u.solver.layout
        grad = newton_kernel_gradient(lay.points, u.source.z)
        analytic = u.source.amplitude * np.sum(grad * lay.outward_normal_sum, axis=1)
        return _fd4_trace(u.u_reg, grid) + analytic
    if method == "fd4":
        return _fd4_trace(u, grid)
    solver = solver or DirichletSolver(grid, q)
    return solver.neumann_trace(u)


_FD4 = np.array([25.0, -48.0, 36.0, -16.0, 3.0]) / 12.0


def _fd4_trace(u: np.ndarray, grid: Grid) -> np.ndarray:
    lay = boundary_layout(grid)
    u = grid.check(u, closed=True)
    acc = np.zeros(lay.size, dtype=u.dtype)
    tot = np.zeros(lay.size)
    for j, side in lay.faces:
        on = lay.on_face(j, side)
        w = lay.tangential_weight(j)
        stencil = lay.index[on].copy()
        val = 0.0
        for m, c in enumerate(_FD4):
            p = stencil.copy()
            p[:, j] = m if side == 0 else grid.n - m
            val = val + c * u[tuple(p.T)]
        # d/dnu = -d/dx at x=0, +d/dx at x=L; the stencil is oriented inward
        acc[on] += w[on] * val / grid.h
        tot[on] += w[on]
    return acc / tot

"""The affine Dirichlet-to-Neumann map and its norms.

A map is stored nodally over the boundary nodes: ``offset`` is the trace
Phi(0) and ``linear`` the matrix A with Phi(f) = offset + A f. The flux is
energy-consistent, so S A is symmetric (S = diagonal boundary area weights),
i.e. A is symmetric for the pairing <f, g> = f^T S g.

The H^{+-1/2} norms go through the S-orthonormal surface eigenbasis Phi of
:mod:`invlab.boundary`, where A reads Phi^T S A Phi and the norms are diagonal.
That basis is dense, so norms are meant for grids up to about 32^3.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse.linalg as spla

from .boundary import boundary_layout
from .errors import DimensionError, FormatError
from .forward import DirichletSolver, PointSource, closed_potential, solve_with_source
from .grid import Grid

DTN_MAGIC = b"DTNM"
DTN_VERSION = 1


@dataclass
class DtnMap:
    grid: Grid
    offset: np.ndarray
    linear: np.ndarray | None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        nb = boundary_layout(self.grid).size
        self.offset = np.asarray(self.offset)
        if self.offset.shape != (nb,):
            raise DimensionError(f"offset has shape {self.offset.shape}, boundary has {nb} nodes")
        if self.linear is not None:
            self.linear = np.asarray(self.linear)
            if self.linear.shape != (nb, nb):
                raise DimensionError(f"linear part has shape {self.linear.shape}, expected ({nb}, {nb})")

    @property
    def layout(self):
        return boundary_layout(self.grid)

    @property
    def size(self) -> int:
        return self.offset.size

    def _require_linear(self):
        if self.linear is None:
            raise DimensionError("this DtN map was assembled without its linear part")

    def apply(self, f) -> np.ndarray:
        """Phi(f) as a nodal trace."""
        self._require_linear()
        return self.offset + self.linear @ np.asarray(f)

    def linear_part(self) -> "DtnMap":
        return DtnMap(self.grid, np.zeros(self.size), self.linear, dict(self.meta))

    def offset_only(self) -> "DtnMap":
        return DtnMap(self.grid, self.offset, None, dict(self.meta))

    def __sub__(self, other: "DtnMap") -> "DtnMap":
        _same_grid(self, other)
        lin = None if self.linear is None or other.linear is None else self.linear - other.linear
        return DtnMap(self.grid, self.offset - other.offset, lin)

    def energy_form(self) -> np.ndarray:
        """S A, the symmetric matrix of (f, g) -> <A f, g>."""
        self._require_linear()
        return self.layout.weights[:, None] * self.linear

    def pair(self, f, g) -> complex:
        """<A f, g> on the boundary (bilinear, no conjugation)."""
        self._require_linear()
        return complex(np.asarray(g) @ (self.layout.weights * (self.linear @ np.asarray(f))))

    def symmetry_defect(self) -> float:
        if self.linear is None:
            return 0.0
        sa = self.energy_form()
        scale = np.abs(sa).max() or 1.0
        return float(np.abs(sa - sa.T).max() / scale)

    def offset_coefficients(self) -> np.ndarray:
        return self.layout.coefficients(self.offset)

    def linear_coefficients(self) -> np.ndarray:
        _, phi = self.layout.eigenbasis
        return phi.T @ self.energy_form() @ phi


def _same_grid(a: DtnMap, b: DtnMap):
    if a.grid != b.grid:
        raise DimensionError(f"DtN maps live on different grids: {a.grid} vs {b.grid}")


def linear_from_coefficients(grid: Grid, coeff: np.ndarray) -> np.ndarray:
    """Nodal A from its eigenbasis form C (so that Phi^T S A Phi = C)."""
    lay = boundary_layout(grid)
    _, phi = lay.eigenbasis
    return (phi @ coeff @ phi.T) * lay.weights[None, :]


def assemble_dtn(q, grid: Grid, source: PointSource | None = None, margin: float = 0.0,
                 solver: DirichletSolver | None = None, linear: bool = True) -> DtnMap:
    """Phi[q, a, z]: offset from the f = 0 source solve, linear part from the Schur complement.

    ``linear=False`` skips the dense part, for offset-only use on large grids.
    """
    solver = solver or DirichletSolver(grid, q)
    lay = solver.layout
    lin = None
    if linear:
        lam_E = solver.schur_complement()
        lin = 0.5 * (lam_E + lam_E.T) / lay.weights[:, None]
    if source is None:
        offset = np.zeros(lay.size)
    else:
        offset = solve_with_source(None, source, None, grid, margin, solver=solver).neumann_trace()
    return DtnMap(grid, offset, lin)


# --- norms -------------------------------------------------------------------------


def _half_weights(grid: Grid) -> np.ndarray:
    lam, _ = boundary_layout(grid).eigenbasis
    return (1.0 + lam) ** 0.25


def _spectral_norm(m: np.ndarray) -> float:
    if m.shape[0] <= 1500:
        return float(sla.svdvals(m)[0]) if m.size else 0.0
    v0 = np.ones(m.shape[0]) / np.sqrt(m.shape[0])
    return float(spla.svds(m, k=1, v0=v0, tol=1e-12, return_singular_vectors=False)[0])


def weighted_linear(dtn: DtnMap) -> np.ndarray:
    """W_{-1/2} C W_{+1/2}^{-1} with C the eigenbasis form: the linear part on l^2."""
    w = _half_weights(dtn.grid)
    return dtn.linear_coefficients() / w[:, None] / w[None, :]


def offset_norm(dtn: DtnMap) -> float:
    w = _half_weights(dtn.grid)
    return float(np.linalg.norm(dtn.offset_coefficients() / w))


def linear_norm(dtn: DtnMap) -> float:
    return _spectral_norm(weighted_linear(dtn))


def star_norm(dtn: DtnMap, convention: str = "sum") -> float:
    """||Phi||_* of an affine map.

    "sum": ||Phi(0)||_{-1/2} + ||linear||_op (the working convention);
    "sup": sup over ||f||_{1/2} <= 1 of ||Phi(f)||_{-1/2}, solved exactly.
    """
    if convention == "sum":
        return offset_norm(dtn) + linear_norm(dtn)
    if convention == "sup":
        return _sup_affine(dtn)
    raise ValueError(f"unknown convention {convention!r}")


def dtn_operator_norm(A: DtnMap, B: DtnMap, convention: str = "sum") -> float:
    _same_grid(A, B)
    return star_norm(A - B, convention)


def _sup_affine(dtn: DtnMap) -> float:
    """max_{|y| <= 1} |b + M y| with M symmetric (trust-region maximization)."""
    w = _half_weights(dtn.grid)
    b = dtn.offset_coefficients() / w
    M = weighted_linear(dtn)
    mu, V = np.linalg.eigh(0.5 * (M + M.T))
    bt = V.T @ b.real
    const = float(np.sum(np.abs(b.imag) ** 2))
    mu2 = mu**2
    top = mu2.max() if mu2.size else 0.0
    if top == 0.0:
        return float(np.sqrt(np.sum(bt**2) + const))
    if not np.any(bt):
        return float(np.sqrt(top + const))

    def ynorm2(tau):
        return np.sum((mu * bt / (tau - mu2)) ** 2)

    lo = top * (1 + 1e-14) + 1e-300
    if ynorm2(lo) < 1.0:
        # hard case: fill the rest with the dominant eigenvector
        y = mu * bt / np.where(mu2 < top * (1 - 1e-12), top - mu2, np.inf)
        rest = max(0.0, 1.0 - np.sum(y**2))
        i = int(np.argmax(mu2))
        y[i] += np.sign(bt[i] or 1.0) * np.sqrt(rest)
    else:
        hi = top + np.linalg.norm(mu * bt) + 1.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if ynorm2(mid) > 1.0:
                lo = mid
            else:
                hi = mid
        y = mu * bt / (hi - mu2)
    val = np.sum((bt + mu * y) ** 2) + const
    # y = 0 is feasible, so it bounds from below
    return float(np.sqrt(max(val, np.sum(bt**2) + const)))


# --- Alessandrini identity ----------------------------------------------------------


def node_masses(grid: Grid) -> np.ndarray:
    idx = np.indices(grid.closed_shape)
    frac = np.prod(np.where((idx == 0) | (idx == grid.n), 0.5, 1.0), axis=0)
    return frac * grid.h**grid.dim


def alessandrini_pairing(dtn1: DtnMap, dtn2: DtnMap, v1, v2, q1=None, q2=None):
    """<(Phi0[q1] - Phi0[q2]) v1|, v2|>, and with q1, q2 given also int (q2 - q1) v1 v2.

    v1, v2 are closed-node arrays. Returns the boundary value, or the tuple
    (boundary, volume) in verification mode.
    """
    _same_grid(dtn1, dtn2)
    grid = dtn1.grid
    lay = dtn1.layout
    v1 = grid.check(v1, closed=True)
    v2 = grid.check(v2, closed=True)
    f1, f2 = lay.extract(v1), lay.extract(v2)
    boundary = dtn1.pair(f1, f2) - dtn2.pair(f1, f2)
    if q1 is None and q2 is None:
        return boundary
    dq = closed_potential(q2, grid) - closed_potential(q1, grid)
    volume = complex(np.sum(node_masses(grid) * dq * v1 * v2))
    return boundary, volume


# --- DTNM files -----------------------------------------------------------------------


def write_dtn(path, dtn: DtnMap, meta: dict | None = None):
    """Header {magic, version u32, n_boundary u32}, offset, row-major linear; f64 LE.

    Both parts are nodal, boundary nodes in row-major closed-grid order. A
    provenance trailer b"META" + u32 length + JSON follows the payload.
    """
    if np.iscomplexobj(dtn.offset) and np.any(dtn.offset.imag):
        raise FormatError("DTNM files hold real maps only (complex source amplitude)")
    if dtn.linear is None:
        raise FormatError("DTNM files need the linear part")
    nb = dtn.size
    with open(path, "wb") as fh:
        fh.write(DTN_MAGIC + struct.pack("<II", DTN_VERSION, nb))
        fh.write(np.ascontiguousarray(dtn.offset.real, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dtn.linear.real, dtype="<f8").tobytes())
        blob = json.dumps(meta if meta is not None else dtn.meta, sort_keys=True).encode()
        fh.write(b"META" + struct.pack("<I", len(blob)) + blob)


def read_dtn(path, grid: Grid) -> DtnMap:
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != DTN_MAGIC:
            raise FormatError(f"{path}: bad magic {head[:4]!r}, expected {DTN_MAGIC!r}")
        version, nb = struct.unpack("<II", head[4:])
        if version != DTN_VERSION:
            raise FormatError(f"{path}: unsupported DTNM version {version}")
        expected = boundary_layout(grid).size
        if nb != expected:
            raise FormatError(f"{path}: n_boundary={nb}, grid {grid} expects {expected}")
        payload = fh.read(8 * (nb + nb * nb))
        if len(payload) != 8 * (nb + nb * nb):
            raise FormatError(f"{path}: truncated payload")
        data = np.frombuffer(payload, dtype="<f8")
        meta = {}
        tag = fh.read(4)
        if tag == b"META":
            (n,) = struct.unpack("<I", fh.read(4))
            meta = json.loads(fh.read(n).decode())
    return DtnMap(grid, data[:nb].copy(), data[nb:].reshape(nb, nb).copy(), meta)

"""Boundary node bookkeeping, surface quadrature and fractional trace norms.

A boundary trace is a flat vector over the (single-valued) boundary nodes of
the closed grid, in row-major node order. Each node carries the area weight
obtained by summing its trapezoid weights over every face that contains it,
so sum_b s_b f_b g_b is the L^2(dOmega) pairing.

The H^{+-1/2}(dOmega) norms use the generalized eigenpairs K phi = lam S phi
of the discrete surface Laplacian (stiffness K from face-wise trapezoid
energies, mass S = diag(s_b)). Up to EIGEN_LIMIT nodes these come from a
dense eigendecomposition; above it the norm is the Gauss quadrature
g^T (I + M)^order g of a Lanczos run on M = S^-1/2 K S^-1/2, g = S^1/2 f.
"""

from __future__ import annotations

from functools import cached_property, lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import DimensionError
from .grid import Grid

EIGEN_LIMIT = 8000


class BoundaryLayout:
    def __init__(self, grid: Grid):
        self.grid = grid
        n, d = grid.n, grid.dim
        idx = np.indices(grid.closed_shape).reshape(d, -1).T
        on_face = (idx == 0) | (idx == n)
        self.mask = on_face.any(axis=1).reshape(grid.closed_shape)
        self.flat = np.flatnonzero(self.mask.ravel())
        self.index = idx[self.flat]
        self.size = self.flat.size
        self._pos = -np.ones(idx.shape[0], dtype=np.int64)
        self._pos[self.flat] = np.arange(self.size)

    # --- faces & weights --------------------------------------------------

    @property
    def faces(self) -> list[tuple[int, int]]:
        return [(j, side) for j in range(self.grid.dim) for side in (0, self.grid.n)]

    def tangential_weight(self, j: int) -> np.ndarray:
        """Trapezoid weight on a face with normal axis j, per boundary node."""
        n = self.grid.n
        w = np.ones(self.size)
        for u in range(self.grid.dim):
            if u != j:
                edge = (self.index[:, u] == 0) | (self.index[:, u] == n)
                w = w * np.where(edge, 0.5, 1.0)
        return w

    def on_face(self, j: int, side: int) -> np.ndarray:
        return self.index[:, j] == side

    @cached_property
    def weights(self) -> np.ndarray:
        h = self.grid.h
        s = np.zeros(self.size)
        for j, side in self.faces:
            s += np.where(self.on_face(j, side), self.tangential_weight(j), 0.0)
        return s * h ** (self.grid.dim - 1)

    @cached_property
    def face_interior(self) -> np.ndarray:
        """Nodes on exactly one face (no edge/corner nodes)."""
        n = self.grid.n
        return ((self.index == 0) | (self.index == n)).sum(axis=1) == 1

    @cached_property
    def outward_normal_sum(self) -> np.ndarray:
        """Per node, face-weight-averaged outward normal (unit on face interiors)."""
        nu = np.zeros((self.size, self.grid.dim))
        tot = np.zeros(self.size)
        for j, side in self.faces:
            w = np.where(self.on_face(j, side), self.tangential_weight(j), 0.0)
            nu[:, j] += w * (1.0 if side else -1.0)
            tot += w
        return nu / tot[:, None]

    # --- conversions -------------------------------------------------------

    def extract(self, closed_values: np.ndarray) -> np.ndarray:
        self.grid.check(closed_values, closed=True)
        return np.asarray(closed_values).ravel()[self.flat]

    def embed(self, trace: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        trace = self.check(trace)
        if out is None:
            out = np.zeros(self.grid.closed_shape, dtype=np.result_type(trace, float))
        out.reshape(-1)[self.flat] = trace
        return out

    def face_view(self, trace: np.ndarray, j: int, side: int) -> np.ndarray:
        full = self.embed(trace)
        sl = [slice(None)] * self.grid.dim
        sl[j] = side
        return full[tuple(sl)]

    def trace_of(self, func) -> np.ndarray:
        """Sample func(points[N, dim]) at the boundary nodes."""
        return func(self.points)

    @cached_property
    def points(self) -> np.ndarray:
        return self.index * self.grid.h

    def position(self, flat_closed_index: np.ndarray) -> np.ndarray:
        return self._pos[flat_closed_index]

    def check(self, trace) -> np.ndarray:
        trace = np.asarray(trace)
        if trace.shape[0] != self.size:
            raise DimensionError(f"trace has {trace.shape[0]} entries, boundary has {self.size} nodes")
        return trace

    def pair(self, f, g) -> complex:
        """Bilinear L^2(dOmega) pairing (no conjugation)."""
        return np.sum(self.weights * self.check(f) * self.check(g))

    # --- surface Laplacian --------------------------------------------------

    @cached_property
    def stiffness(self) -> sp.csr_matrix:
        grid = self.grid
        n, d, h = grid.n, grid.dim, grid.h
        rows, cols, vals = [], [], []
        for t in range(d):
            nxt = self.index.copy()
            nxt[:, t] += 1
            ok = nxt[:, t] <= n
            flat_next = np.ravel_multi_index(nxt[ok].T, grid.closed_shape)
            pos_next = self._pos[flat_next]
            a = np.flatnonzero(ok)[pos_next >= 0]
            b = pos_next[pos_next >= 0]
            c = np.zeros(a.size)
            for j, side in self.faces:
                if j == t:
                    continue
                both = (self.index[a, j] == side) & (self.index[b, j] == side)
                w = np.ones(a.size)
                for u in range(d):
                    if u not in (j, t):
                        edge = (self.index[a, u] == 0) | (self.index[a, u] == n)
                        w = w * np.where(edge, 0.5, 1.0)
                c += np.where(both, w, 0.0)
            keep = c > 0
            a, b, c = a[keep], b[keep], c[keep] * h ** (d - 3)
            rows += [a, b, a, b]
            cols += [a, b, b, a]
            vals += [c, c, -c, -c]
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.size, self.size))

    @cached_property
    def eigenbasis(self) -> tuple[np.ndarray, np.ndarray]:
        """(lam, Phi) with K Phi = S Phi diag(lam), Phi^T S Phi = I."""
        sq = np.sqrt(self.weights)
        a = self.stiffness.toarray()
        a /= sq[:, None]
        a /= sq[None, :]
        lam, u = sla.eigh(a, overwrite_a=True, check_finite=False)
        lam = np.clip(lam, 0.0, None)
        phi = u / sq[:, None]
        # deterministic sign: largest-magnitude entry positive
        sgn = np.sign(phi[np.argmax(np.abs(phi), axis=0), np.arange(phi.shape[1])])
        phi *= np.where(sgn == 0, 1.0, sgn)
        return lam, phi

    def coefficients(self, trace) -> np.ndarray:
        trace = self.check(trace)
        _, phi = self.eigenbasis
        w = self.weights if trace.ndim == 1 else self.weights[:, None]
        return phi.T @ (w * trace)

    def synthesize(self, coeffs) -> np.ndarray:
        _, phi = self.eigenbasis
        return phi @ coeffs


@lru_cache(maxsize=4)
def boundary_layout(grid: Grid) -> BoundaryLayout:
    return BoundaryLayout(grid)


def fractional_weights(lam: np.ndarray, order: float) -> np.ndarray:
    return (1.0 + lam) ** order


def _lanczos_form(matvec, g: np.ndarray, fun, steps: int = 120, tol: float = 1e-13) -> float:
    """g^T fun(M) g for symmetric M by Lanczos quadrature (full reorthogonalization)."""
    beta0 = np.linalg.norm(g)
    if beta0 == 0:
        return 0.0
    Q = [g / beta0]
    alpha, beta = [], []
    for k in range(min(steps, g.size)):
        w = matvec(Q[k])
        alpha.append(Q[k] @ w)
        for v in Q:
            w -= (v @ w) * v
        b = np.linalg.norm(w)
        if b <= tol * abs(alpha[-1]) + 1e-300:
            break
        beta.append(b)
        Q.append(w / b)
    T = np.diag(alpha) + np.diag(beta[: len(alpha) - 1], 1) + np.diag(beta[: len(alpha) - 1], -1)
    theta, U = np.linalg.eigh(T)
    return float(beta0**2 * np.sum(U[0] ** 2 * fun(np.clip(theta, 0.0, None))))


def boundary_fractional_norm(trace, grid: Grid, order: float) -> float:
    """||f||_{H^order(dOmega)} for order = +-1/2, via surface eigen-weights."""
    if order not in (0.5, -0.5):
        raise ValueError("order must be +1/2 or -1/2")
    lay = boundary_layout(grid)
    if lay.size > EIGEN_LIMIT:
        f = lay.check(trace)
        sq = np.sqrt(lay.weights)
        K = lay.stiffness

        def matvec(x):
            return (K @ (x / sq)) / sq

        def fun(lam):
            return fractional_weights(lam, order)

        total = sum(_lanczos_form(matvec, sq * part, fun) for part in (f.real, np.imag(f)) if np.any(part))
        return float(np.sqrt(total))
    c = lay.coefficients(trace)
    lam, _ = lay.eigenbasis
    return float(np.sqrt(np.sum(fractional_weights(lam, order) * np.abs(c) ** 2)))

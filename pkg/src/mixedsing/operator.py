"""
Discrete mixed operator ``A = A_loc + A_frac`` for -Lap + (-Lap)^s with zero
exterior data.

The fractional part is a lattice quadrature of the singular integral:

    (A_frac u)_i = sum_{j != i} w_ij (u_i - u_j) + tail_i u_i,
    w_ij = C(N,s) h^N / |x_i - x_j|^(N+2s),

where ``tail_i`` collects the exterior cells (u = 0 there).  The self cell is
omitted.  Because the nodes sit on a common lattice the full-lattice row sum
is the same for every node, so the diagonal ``d = sum_j w_ij + tail_i`` is a
single number: an exact lattice sum out to radius R plus the closed-form
radial integral beyond R.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math
import struct

import numpy as np
import scipy.sparse as sp
from scipy import integrate

from .grid import Grid

DENSE_MEMORY_BUDGET = 2.2e9  # bytes for one dense n x n float64 matrix
ROW_BLOCK_BYTES = 64e6


def unit_sphere_area(N: int) -> float:
    """Surface measure of S^{N-1}."""
    return 2.0 * math.pi ** (N / 2) / math.gamma(N / 2)


def _sinc2(t: float) -> float:
    if t < 1e-4:
        return 0.5 - t * t / 24.0
    return 2.0 * math.sin(0.5 * t) ** 2 / (t * t)


def _radial_cosine_integral(s: float) -> float:
    # int_0^inf (1 - cos t) t^(-1-2s) dt, split at t = 1; the tail uses QAWF
    # (1 - cos t)/t^2 is smooth; the weak singularity t^(1-2s) goes into the weight
    head, _ = integrate.quad(_sinc2, 0.0, 1.0, weight="alg", wvar=(1.0 - 2.0 * s, 0.0))
    # int_1^inf cos(t) t^(-1-2s) dt after one integration by parts
    osc, _ = integrate.quad(lambda t: t ** (-2.0 - 2.0 * s), 1.0, np.inf,
                            weight="sin", wvar=1.0, epsabs=1e-12, limlst=100)
    osc = (1.0 + 2.0 * s) * osc - math.sin(1.0)
    return head + 1.0 / (2.0 * s) - osc


def _angular_moment(N: int, s: float) -> float:
    # int_{S^{N-1}} |theta_1|^{2s} dsigma(theta)
    if N == 1:
        return 2.0
    # theta_1 = cos(phi); the remaining sphere S^{N-2} contributes sin^{N-2}(phi)
    inner, _ = integrate.quad(lambda p: abs(math.cos(p)) ** (2 * s) * math.sin(p) ** (N - 2),
                              0.0, math.pi, epsabs=0.0, epsrel=1e-13, limit=200,
                              points=[math.pi / 2])
    return unit_sphere_area(N - 1) * inner


def normalizing_constant(N: int, s: float) -> float:
    """C(N,s) = ( int_{R^N} (1 - cos xi_1) / |xi|^{N+2s} dxi )^{-1}, by quadrature.

    In polar form the integral factorizes into a radial oscillatory integral
    and an angular moment of |theta_1|^{2s}; both are integrated adaptively.
    """
    if N not in (1, 2, 3):
        raise ValueError(f"N must be 1, 2 or 3, got {N}")
    if not 0.0 < s < 1.0:
        raise ValueError(f"fractional order s must lie in (0,1), got {s}")
    return 1.0 / (_radial_cosine_integral(s) * _angular_moment(N, s))


@dataclass(frozen=True)
class FractionalParams:
    s: float
    C: float
    R: float
    self_cell: str = "omit"

    @classmethod
    def for_grid(cls, grid: Grid, s: float, R: float | None = None) -> "FractionalParams":
        if R is None:
            R = 4.0 * grid.diameter
        return cls(s=s, C=normalizing_constant(grid.N, s), R=R)


def lattice_power_sum(N: int, exponent: float, radius: float) -> float:
    """sum over k in Z^N, 0 < |k| <= radius, of |k|^(-exponent).

    Points on the sphere |k| = radius are included (up to rounding).
    """
    rho = int(math.floor(radius * (1 + 1e-12)))
    ks = np.arange(-rho, rho + 1, dtype=np.float64)
    r2 = radius * radius * (1 + 1e-12)
    total = 0.0
    if N == 1:
        k = ks[ks != 0]
        return float(np.sum(np.abs(k) ** -exponent))
    rest = np.meshgrid(*([ks] * (N - 1)), indexing="ij")
    rest2 = sum(c * c for c in rest)
    for k1 in ks:
        q = rest2 + k1 * k1
        mask = (q <= r2) & (q > 0)
        total += float(np.sum(q[mask] ** (-exponent / 2)))
    return total


def assemble_local(grid: Grid) -> sp.csr_matrix:
    """(2N+1)-point Dirichlet Laplacian, entries in 1/length^2."""
    n, h2 = grid.size, grid.h ** 2
    rows, cols = [np.arange(n)], [np.arange(n)]
    vals = [np.full(n, 2.0 * grid.N / h2)]
    for axis in range(grid.N):
        for step in (-1, 1):
            nb = grid.neighbors(axis, step)
            ok = nb >= 0
            rows.append(np.flatnonzero(ok))
            cols.append(nb[ok])
            vals.append(np.full(ok.sum(), -1.0 / h2))
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    return A.tocsr()


@dataclass(eq=False)
class FractionalPart:
    """Kernel table, constant diagonal and exterior tail of A_frac."""

    grid: Grid
    params: FractionalParams
    table: np.ndarray = field(repr=False)
    diagonal: float
    tail: np.ndarray = field(repr=False)

    def weight_block(self, rows) -> np.ndarray:
        """Off-diagonal weights w_ij for the given rows against all nodes (zero on i == j)."""
        # the table is even in the offset, so row i is the window starting at m - k_i
        grid, m = self.grid, self.grid.m
        flat = np.ravel_multi_index(tuple((grid.index - 1).T), (m,) * grid.N)
        out = np.empty((len(rows), grid.size))
        for r, k in enumerate(grid.index[rows]):
            window = self.table[tuple(slice(m - c, 2 * m - c) for c in k)]
            out[r] = window.reshape(-1)[flat]
        return out

    def row_blocks(self):
        n = self.grid.size
        step = max(1, int(ROW_BLOCK_BYTES // (8 * n)))
        for start in range(0, n, step):
            yield np.arange(start, min(n, start + step))

    def apply_offdiag(self, u: np.ndarray) -> np.ndarray:
        """W u with W_ij = w_ij, computed block-wise without storing W."""
        out = np.empty(u.shape, dtype=np.float64)
        for rows in self.row_blocks():
            out[rows] = self.weight_block(rows) @ u
        return out

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.diagonal * u - self.apply_offdiag(u)

    def dense(self) -> np.ndarray:
        n = self.grid.size
        M = np.empty((n, n))
        for rows in self.row_blocks():
            M[rows] = -self.weight_block(rows)
        M[np.diag_indices(n)] = self.diagonal
        return M


def assemble_fractional(grid: Grid, params: FractionalParams) -> FractionalPart:
    if params.R < 2.0 * grid.diameter:
        raise ValueError(f"far-field radius R={params.R} must be at least 2*diam = {2 * grid.diameter}")
    if params.self_cell != "omit":
        raise ValueError(f"unsupported self-cell policy {params.self_cell!r}")
    N, m, h, s, C = grid.N, grid.m, grid.h, params.s, params.C
    ks = np.arange(-(m - 1), m)
    grids = np.meshgrid(*([ks] * N), indexing="ij")
    r2 = sum(g.astype(np.float64) ** 2 for g in grids)
    table = np.zeros_like(r2)
    nz = r2 > 0
    # C h^N / (h|k|)^(N+2s) = C h^-2s |k|^-(N+2s)
    table[nz] = C * h ** (-2.0 * s) * r2[nz] ** (-(N + 2.0 * s) / 2)
    near = h ** (-2.0 * s) * lattice_power_sum(N, N + 2.0 * s, params.R / h)
    far = unit_sphere_area(N) * params.R ** (-2.0 * s) / (2.0 * s)
    diagonal = C * (near + far)
    part = FractionalPart(grid=grid, params=params, table=table, diagonal=diagonal,
                          tail=np.empty(0))
    part.tail = diagonal - part.apply_offdiag(np.ones(grid.size))
    part.table.setflags(write=False)
    part.tail.setflags(write=False)
    return part


class MixedOperator:
    """A = A_loc + A_frac, stored dense or applied matrix-free.

    ``storage="auto"`` picks dense whenever the n x n matrix fits in
    ``DENSE_MEMORY_BUDGET``.
    """

    def __init__(self, grid: Grid, s: float, storage: str = "auto", R: float | None = None):
        self.grid = grid
        self.params = FractionalParams.for_grid(grid, s, R)
        self.local = assemble_local(grid)
        self.frac = assemble_fractional(grid, self.params)
        if storage == "auto":
            storage = "dense" if 8.0 * grid.size ** 2 <= DENSE_MEMORY_BUDGET else "matrix-free"
        if storage not in ("dense", "matrix-free"):
            raise ValueError(f"storage must be 'dense', 'matrix-free' or 'auto', got {storage!r}")
        self.storage = storage
        self._dense = None
        if storage == "dense":
            M = self.frac.dense()
            coo = self.local.tocoo()
            np.add.at(M, (coo.row, coo.col), coo.data)
            M.setflags(write=False)
            self._dense = M

    @property
    def s(self) -> float:
        return self.params.s

    @property
    def size(self) -> int:
        return self.grid.size

    @property
    def tail(self) -> np.ndarray:
        return self.frac.tail

    @property
    def dense(self) -> np.ndarray:
        """Dense matrix (a read-only view when stored, assembled on demand otherwise)."""
        if self._dense is not None:
            return self._dense
        M = self.frac.dense()
        M += self.local.toarray()
        return M

    def diagonal(self) -> np.ndarray:
        return self.local.diagonal() + self.frac.diagonal

    def apply(self, u: np.ndarray) -> np.ndarray:
        if self._dense is not None:
            return self._dense @ u
        return self.local @ u + self.frac.apply(u)

    def apply_fractional(self, u: np.ndarray) -> np.ndarray:
        return self.frac.apply(u)

    def sparse_part(self, extra_diagonal=None) -> sp.csr_matrix:
        """A_loc + diag(tail) [+ diag(extra)]: the sparse M-matrix bounding A from below."""
        d = np.array(self.tail)
        if extra_diagonal is not None:
            d = d + extra_diagonal
        return (self.local + sp.diags(d)).tocsr()

    def __repr__(self):
        return (f"MixedOperator(N={self.grid.N}, shape={self.grid.shape!r}, m={self.grid.m}, "
                f"s={self.s}, storage={self.storage!r})")


def apply_operator(op: MixedOperator, u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (op.size,):
        raise ValueError(f"grid function has shape {u.shape}, expected ({op.size},)")
    return op.apply(u)


def weak_residual(op: MixedOperator, u, rhs) -> float:
    """Largest |<Au - rhs, psi> h^N| over unit-bump test functions psi = e_i."""
    rhs = np.asarray(rhs, dtype=np.float64)
    if rhs.shape != (op.size,):
        raise ValueError(f"rhs has shape {rhs.shape}, expected ({op.size},)")
    r = apply_operator(op, u) - rhs
    return float(np.max(np.abs(r)) * op.grid.cell_volume)


def dirichlet_energy(grid: Grid, u) -> float:
    """sum |grad_h u|^2 h^N with forward differences and zero exterior extension."""
    padded = np.zeros((grid.m + 2,) * grid.N)
    padded[tuple(grid.index.T)] = u
    total = 0.0
    for axis in range(grid.N):
        total += float(np.sum(np.diff(padded, axis=axis) ** 2))
    return total * grid.h ** (grid.N - 2)


def dump_dense(op: MixedOperator, path) -> None:
    """Write the dense matrix: header (int32 N, int32 m, float64 s) then row-major float64, little-endian."""
    M = np.ascontiguousarray(op.dense, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<iid", op.grid.N, op.grid.m, op.s))
        fh.write(M.tobytes())


def load_dense(path):
    with open(path, "rb") as fh:
        N, m, s = struct.unpack("<iid", fh.read(16))
        data = np.frombuffer(fh.read(), dtype="<f8")
    n = int(round(math.sqrt(data.size)))
    return N, m, s, data.reshape(n, n)

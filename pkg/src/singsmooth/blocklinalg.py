"""Block bidiagonal constraint matrix and the affine projection onto ``Az = w``.

Row block ``k`` of ``A`` holds the process rows then the measurement rows of
step ``k``::

    D_k = [[C_k, 0,   I  ],        B_k = [[0, 0, -G_{k+1}],
           [0,   S_k, H_k]]               [0, 0,  0      ]]

``D_k`` sits on the block diagonal and ``B_k`` couples row block ``k+1`` to
the columns of step ``k``.  ``A A^T`` is block tridiagonal; it is factored
once by a block Cholesky sweep and every projection afterwards costs two
banded triangular solves plus two sparse products, i.e. ``O(n^2 N)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import DimensionError, ModelError, RankDeficiencyError


@dataclass(frozen=True, eq=False)
class BlockBidiagonal:
    diag_blocks: tuple
    sub_blocks: tuple
    layout: object

    def __post_init__(self):
        N = len(self.diag_blocks)
        if len(self.sub_blocks) != max(N - 1, 0):
            raise DimensionError("need exactly N-1 sub-diagonal blocks")

    @property
    def N(self):
        return len(self.diag_blocks)

    @property
    def shape(self):
        return (self.layout.rows, self.layout.size)

    @cached_property
    def sparse(self):
        ro, co = self.layout.row_offsets, self.layout.col_offsets
        rows, cols, vals = [], [], []

        def put(M, r0, c0):
            i, j = np.nonzero(M)
            rows.append(i + r0)
            cols.append(j + c0)
            vals.append(M[i, j])

        for k, D in enumerate(self.diag_blocks):
            put(D, ro[k], co[k])
        for k, B in enumerate(self.sub_blocks):
            put(B, ro[k + 1], co[k])
        out = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(ro[-1], co[-1]))
        return out.tocsr()

    @cached_property
    def sparse_T(self):
        return self.sparse.T.tocsr()

    def to_dense(self):
        return self.sparse.toarray()

    def scale_columns(self, c):
        """``A diag(c)`` with the same block structure."""
        c = np.asarray(c, dtype=float)
        co = self.layout.col_offsets
        diag = tuple(D * c[co[k]:co[k + 1]] for k, D in enumerate(self.diag_blocks))
        sub = tuple(B * c[co[k]:co[k + 1]] for k, B in enumerate(self.sub_blocks))
        return BlockBidiagonal(diag, sub, self.layout)


@dataclass(frozen=True, eq=False)
class BlockTridiagonal:
    """Symmetric block tridiagonal matrix; ``offdiag[k]`` is the ``(k+1, k)`` block."""

    diag: tuple
    offdiag: tuple

    @property
    def N(self):
        return len(self.diag)

    @property
    def sizes(self):
        return [d.shape[0] for d in self.diag]

    def to_dense(self):
        off = np.concatenate([[0], np.cumsum(self.sizes)])
        T = np.zeros((off[-1], off[-1]))
        for k, d in enumerate(self.diag):
            T[off[k]:off[k + 1], off[k]:off[k + 1]] = d
        for k, o in enumerate(self.offdiag):
            T[off[k + 1]:off[k + 2], off[k]:off[k + 1]] = o
            T[off[k]:off[k + 1], off[k + 1]:off[k + 2]] = o.T
        return T


@dataclass(frozen=True, eq=False)
class BlockCholeskyFactor:
    """Lower block bidiagonal ``L`` with ``L L^T = T``.

    ``banded`` holds the same factor in LAPACK lower band storage, which is
    what the per-iteration solves use.
    """

    lower_diag: tuple
    lower_sub: tuple
    banded: np.ndarray = field(repr=False)

    @property
    def N(self):
        return len(self.lower_diag)

    def to_dense(self):
        sizes = [d.shape[0] for d in self.lower_diag]
        off = np.concatenate([[0], np.cumsum(sizes)])
        L = np.zeros((off[-1], off[-1]))
        for k, d in enumerate(self.lower_diag):
            L[off[k]:off[k + 1], off[k]:off[k + 1]] = d
        for k, o in enumerate(self.lower_sub):
            L[off[k + 1]:off[k + 2], off[k]:off[k + 1]] = o
        return L

    def solve(self, b):
        """Solve ``L L^T x = b``."""
        return sla.cho_solve_banded((self.banded, True), b, check_finite=False)


def assemble(problem):
    """Build ``A`` and the right-hand side ``w = (x0, y_1, 0, y_2, ..., 0, y_N)``."""
    lay = problem.layout
    n = problem.n
    diag, sub, rhs = [], [], []
    for k, st in enumerate(problem.steps):
        r, s, m = st.r, st.s, st.m
        if st.C.shape[0] != n or st.H.shape[1] != n or st.S.shape[0] != m or st.y.size != m:
            raise ModelError(f"step {k}: inconsistent block dimensions", step=k)
        D = np.zeros((n + m, r + s + n))
        D[:n, :r] = st.C
        D[:n, r + s:] = np.eye(n)
        D[n:, r:r + s] = st.S
        D[n:, r + s:] = st.H
        diag.append(D)
        if k > 0:
            prev = problem.steps[k - 1]
            B = np.zeros((n + m, prev.r + prev.s + n))
            B[:n, prev.r + prev.s:] = -st.G
            sub.append(B)
        rhs.append(problem.x0 if k == 0 else np.zeros(n))
        rhs.append(st.y)
    return BlockBidiagonal(tuple(diag), tuple(sub), lay), np.concatenate(rhs)


def gram(A):
    """Block tridiagonal ``A A^T``."""
    diag, off = [], []
    for k, D in enumerate(A.diag_blocks):
        d = D @ D.T
        if k > 0:
            B = A.sub_blocks[k - 1]
            d = d + B @ B.T
        diag.append(d)
    for k, B in enumerate(A.sub_blocks):
        off.append(B @ A.diag_blocks[k].T)
    return BlockTridiagonal(tuple(diag), tuple(off))


def factor(T, pivot_tol=1e-10):
    """Block Cholesky factor of a symmetric block tridiagonal matrix.

    Raises :class:`RankDeficiencyError` naming the time index whose pivot
    block is not positive definite (relative to the largest diagonal entry).
    """
    scale = max((float(np.max(np.diag(d), initial=0.0)) for d in T.diag), default=0.0)
    if scale <= 0:
        scale = 1.0
    Ld, Ls = [], []
    M = None
    for k, d in enumerate(T.diag):
        piv = d if M is None else d - M @ M.T
        piv = 0.5 * (piv + piv.T)
        if piv.shape[0] == 0:
            Lk = piv
        else:
            try:
                Lk = np.linalg.cholesky(piv)
            except np.linalg.LinAlgError:
                raise RankDeficiencyError(
                    f"pivot block {k} of A A^T is not positive definite: the "
                    f"constraint matrix lacks full row rank at time index {k}", step=k
                ) from None
            # the Cholesky diagonal can hide a near-singular pivot; check its spectrum
            if np.linalg.eigvalsh(piv)[0] <= pivot_tol * scale:
                raise RankDeficiencyError(
                    f"pivot block {k} of A A^T is numerically singular: the "
                    f"constraint matrix lacks full row rank at time index {k}", step=k)
        Ld.append(Lk)
        if k < len(T.offdiag):
            # M_k = offdiag_k L_k^{-T}
            M = sla.solve_triangular(Lk, T.offdiag[k].T, lower=True, check_finite=False).T
            Ls.append(M)
    return BlockCholeskyFactor(tuple(Ld), tuple(Ls), _pack_banded(Ld, Ls))


def _pack_banded(Ld, Ls):
    sizes = [d.shape[0] for d in Ld]
    off = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
    bw = max(sizes)
    for k in range(len(Ls)):
        bw = max(bw, sizes[k] + sizes[k + 1])
    nrow = off[-1]
    ab = np.zeros((bw, nrow))
    for k, L in enumerate(Ld):
        i, j = np.tril_indices(sizes[k])
        ab[i - j, off[k] + j] = L[i, j]
    for k, M in enumerate(Ls):
        i, j = np.indices(M.shape)
        gi = off[k + 1] + i
        gj = off[k] + j
        ab[(gi - gj).ravel(), gj.ravel()] = M.ravel()
    return ab


def matvec(A, v):
    v = np.asarray(v, dtype=float)
    if v.shape != (A.shape[1],):
        raise DimensionError(f"expected vector of length {A.shape[1]}, got {v.shape}")
    return A.sparse @ v


def matvec_transpose(A, v):
    v = np.asarray(v, dtype=float)
    if v.shape != (A.shape[0],):
        raise DimensionError(f"expected vector of length {A.shape[0]}, got {v.shape}")
    return A.sparse_T @ v


def solve_affine_projection(A, fac, w_hat, eta):
    """Euclidean projection of ``eta`` onto ``{z : A z = w_hat}``.

    Solves ``A A^T nu = A eta - w_hat`` with the stored factor and returns
    ``eta - A^T nu``.
    """
    nu = fac.solve(matvec(A, eta) - w_hat)
    return eta - matvec_transpose(A, nu)


class AffineProjector:
    """``A``, ``w_hat`` and the factor of ``A A^T`` bundled for repeated projections.

    With ``col_scale`` the projector works on ``zhat`` where ``z = col_scale * zhat``,
    i.e. on the constraint ``A diag(col_scale) zhat = w_hat``.
    """

    def __init__(self, problem, pivot_tol=1e-10, col_scale=None):
        self.A, self.w_hat = assemble(problem)
        self.col_scale = None
        if col_scale is not None:
            self.col_scale = np.broadcast_to(np.asarray(col_scale, dtype=float),
                                             (self.A.shape[1],)).copy()
            if np.any(self.col_scale <= 0):
                raise DimensionError("column scales must be positive")
            self.A = self.A.scale_columns(self.col_scale)
        self.T = gram(self.A)
        self.factor = factor(self.T, pivot_tol)

    def __call__(self, eta):
        return solve_affine_projection(self.A, self.factor, self.w_hat, eta)

    def residual(self, z):
        return matvec(self.A, z) - self.w_hat

    def range_residual(self, v):
        """Component of ``v`` orthogonal to ``range(A^T)``."""
        nu = self.factor.solve(matvec(self.A, v))
        return v - matvec_transpose(self.A, nu)


def write_matrix_market(path_prefix, A, T):
    """Debug dump of ``A`` and ``A A^T`` as Matrix Market coordinate files."""
    import scipy.io

    scipy.io.mmwrite(f"{path_prefix}A.mtx", A.sparse, comment="constraint matrix A")
    scipy.io.mmwrite(f"{path_prefix}AAt.mtx", sp.coo_matrix(T.to_dense()),
                     comment="Gram matrix A A^T", symmetry="symmetric")

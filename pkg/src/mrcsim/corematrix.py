"""Correlation-matrix domain types and the shared symmetric linear algebra.

All matrices are plain ``numpy.ndarray`` in float64.  Every spectral
operation (PSD tests, square roots, positive parts) routes through
``numpy.linalg.eigh`` so that there is a single numerical policy and a
single tolerance convention: ``TOL_PSD`` is relative to the largest
eigenvalue magnitude.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    NonpositiveDiagonal,
    NotPositiveSemidefinite,
    NotUnitDiagonal,
)

TOL_PSD = 1e-10
TOL_RECON = 1e-10
TOL_RANK = 1e-12


def symmetrize(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (x + x.T)


def is_symmetric(x, tol=1e-12):
    x = np.asarray(x)
    return x.ndim == 2 and x.shape[0] == x.shape[1] and np.all(np.abs(x - x.T) <= tol)


def validate_correlation(x, tol=TOL_PSD):
    """Check that ``x`` is a correlation matrix and return it with the
    diagonal snapped to exactly 1.

    Raises
    ------
    NotUnitDiagonal
        If a diagonal entry differs from 1 by more than ``tol``.
    NotPositiveSemidefinite
        If the smallest eigenvalue is below ``-tol * max|eig|``.
    """
    x = symmetrize(x)
    d = x.shape[0]
    diag = np.diag(x)
    bad = np.argmax(np.abs(diag - 1.0))
    if abs(diag[bad] - 1.0) > tol:
        raise NotUnitDiagonal(int(bad), float(diag[bad]))
    w = np.linalg.eigvalsh(x)
    scale = max(abs(w[0]), abs(w[-1]), 1.0)
    if w[0] < -tol * scale:
        raise NotPositiveSemidefinite(float(w[0]), "correlation candidate")
    out = x.copy()
    out[np.diag_indices(d)] = 1.0
    return np.clip(out, -1.0, 1.0)


def is_correlation(x, tol=TOL_PSD):
    try:
        validate_correlation(x, tol)
    except (NotUnitDiagonal, NotPositiveSemidefinite):
        return False
    return True


def project_correlation(y):
    """Rescale a matrix with positive diagonal onto unit diagonal:
    ``p(y)_ij = y_ij / sqrt(y_ii y_jj)``."""
    y = np.asarray(y, dtype=np.float64)
    diag = np.diag(y)
    bad = np.argmin(diag)
    if diag[bad] <= 0.0:
        raise NonpositiveDiagonal(int(bad), float(diag[bad]))
    s = 1.0 / np.sqrt(diag)
    out = y * np.outer(s, s)
    out[np.diag_indices(y.shape[0])] = 1.0
    return out


def psd_sqrt(y, tol=TOL_PSD):
    """Symmetric PSD square root.  Eigenvalues in ``[-tol*scale, 0)`` are
    clamped to 0; anything lower raises ``NotPositiveSemidefinite``."""
    y = symmetrize(y)
    w, v = np.linalg.eigh(y)
    scale = max(abs(w[0]), abs(w[-1]), 1.0)
    if w[0] < -tol * scale:
        raise NotPositiveSemidefinite(float(w[0]), "psd_sqrt argument")
    w = np.clip(w, 0.0, None)
    return symmetrize((v * np.sqrt(w)) @ v.T)


def positive_part(x):
    """Same eigenvectors, eigenvalues replaced by ``max(eig, 0)``."""
    x = symmetrize(x)
    w, v = np.linalg.eigh(x)
    if w[0] >= 0.0:
        return x
    return symmetrize((v * np.clip(w, 0.0, None)) @ v.T)


def submatrix_drop(x, n):
    """Sub-matrix of ``x`` with row and column ``n`` removed."""
    idx = [i for i in range(x.shape[0]) if i != n]
    return x[np.ix_(idx, idx)]


def row_drop(x, n):
    """Row ``n`` of ``x`` with the diagonal entry removed (the vector
    ``x^n`` of the first-row reduction)."""
    idx = [i for i in range(x.shape[0]) if i != n]
    return x[n, idx]


def diffusion_factor(x, n, tol=TOL_PSD):
    """``sqrt(x - x e^n x)`` for a correlation matrix ``x``.

    Computed on the (d-1)-block ``Subm(x, n) - x^n (x^n)^T``; row and
    column ``n`` of the result are exactly zero.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    xn = row_drop(x, n)
    block = submatrix_drop(x, n) - np.outer(xn, xn)
    s = psd_sqrt(block, tol)
    out = np.zeros((d, d))
    idx = [i for i in range(d) if i != n]
    out[np.ix_(idx, idx)] = s
    return out


@dataclass(frozen=True)
class MrcParams:
    """Coefficients (x, kappa, c, a) of the mean-reverting correlation SDE.

    ``x`` and ``c`` are correlation matrices, ``kappa`` and ``a`` the
    diagonals of the nonnegative diagonal speed and volatility matrices.
    """

    x: np.ndarray
    kappa: np.ndarray
    c: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", validate_correlation(self.x))
        object.__setattr__(self, "c", validate_correlation(self.c))
        kappa = np.asarray(self.kappa, dtype=np.float64)
        a = np.asarray(self.a, dtype=np.float64)
        d = self.x.shape[0]
        if self.c.shape != (d, d) or kappa.shape != (d,) or a.shape != (d,):
            raise ValueError("parameter dimensions disagree")
        if np.any(kappa < 0.0) or np.any(a < 0.0):
            raise ValueError("kappa and a must be nonnegative")
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "a", a)

    @property
    def dim(self):
        return self.x.shape[0]

    def restricted(self, subset):
        """Parameters of the principal sub-process on index set ``subset``."""
        idx = np.asarray(sorted(subset), dtype=np.intp)
        return MrcParams(
            x=self.x[np.ix_(idx, idx)],
            kappa=self.kappa[idx],
            c=self.c[np.ix_(idx, idx)],
            a=self.a[idx],
        )

    def to_dict(self):
        return {
            "x": self.x.tolist(),
            "kappa": self.kappa.tolist(),
            "c": self.c.tolist(),
            "a": self.a.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            x=np.asarray(d["x"], dtype=np.float64),
            kappa=np.asarray(d["kappa"], dtype=np.float64),
            c=np.asarray(d["c"], dtype=np.float64),
            a=np.asarray(d["a"], dtype=np.float64),
        )


def equicorrelation(d, rho):
    """The correlation matrix with all off-diagonal entries equal to rho."""
    x = np.full((d, d), float(rho))
    x[np.diag_indices(d)] = 1.0
    return x


@dataclass(frozen=True)
class ExtCholFactors:
    """Pivoted outer-product factorization ``P q P^T = m m^T`` with
    ``m = [[m_r, 0], [k_r, 0]]``, ``m_r`` lower triangular invertible."""

    perm: np.ndarray  # row index map: (P q P^T)[i, j] = q[perm[i], perm[j]]
    m_r: np.ndarray
    k_r: np.ndarray
    rank: int

    @property
    def dim(self):
        return self.perm.shape[0]

    def m_full(self):
        n, r = self.dim, self.rank
        m = np.zeros((n, n))
        m[:r, :r] = self.m_r
        m[r:, :r] = self.k_r
        return m

    def perm_matrix(self):
        p = np.zeros((self.dim, self.dim))
        p[np.arange(self.dim), self.perm] = 1.0
        return p

    def reconstruct(self):
        m = self.m_full()
        inv = np.argsort(self.perm)
        return (m @ m.T)[np.ix_(inv, inv)]


def extended_cholesky(q, tol_rank=TOL_RANK):
    """Extended (diagonally pivoted, rank-revealing) Cholesky factorization
    of a PSD matrix.

    The pivot is the largest remaining diagonal entry, ties broken by the
    lowest index.  Pivots at or below ``tol_rank`` terminate the
    factorization and define the rank; a pivot below ``-tol_rank`` raises
    ``NotPositiveSemidefinite``.
    """
    a = symmetrize(q).copy()
    n = a.shape[0]
    perm = np.arange(n)
    rank = n
    for k in range(n):
        j = k + int(np.argmax(np.diag(a)[k:]))
        pivot = a[j, j]
        if pivot <= tol_rank:
            if pivot < -tol_rank:
                raise NotPositiveSemidefinite(float(pivot), "extended_cholesky pivot")
            rank = k
            break
        if j != k:
            a[[k, j], :] = a[[j, k], :]
            a[:, [k, j]] = a[:, [j, k]]
            perm[[k, j]] = perm[[j, k]]
        a[k, k] = np.sqrt(pivot)
        a[k + 1 :, k] /= a[k, k]
        a[k + 1 :, k + 1 :] -= np.outer(a[k + 1 :, k], a[k + 1 :, k])
    l = np.tril(a)
    return ExtCholFactors(
        perm=perm, m_r=l[:rank, :rank].copy(), k_r=l[rank:, :rank].copy(), rank=rank
    )


@dataclass(frozen=True)
class ReducedForm:
    """Factorization ``x = p m c_check m^T p^T`` where the lower-right
    (d-1) block of ``c_check`` is the identity and only its first row
    carries state."""

    perm: np.ndarray  # length-d index map of the congruence frame
    m: np.ndarray  # d x d block matrix diag(1, [[m_r,0],[k_r,0]])
    c_check: np.ndarray
    rank: int  # rank of the lower-right block of x

    def perm_matrix(self):
        # x = P^T (m c_check m^T) P with P[i,j] = 1{j == perm[i]}
        d = self.perm.shape[0]
        p = np.zeros((d, d))
        p[np.arange(d), self.perm] = 1.0
        return p.T

    def first_row(self):
        """The unit-ball vector: first row of ``c_check`` without the 1."""
        return self.c_check[0, 1:].copy()

    def reconstruct(self):
        inner = self.m @ self.c_check @ self.m.T
        inv = np.argsort(self.perm)
        return inner[np.ix_(inv, inv)]


def _forward_substitution(l, b):
    """Solve ``l y = b`` for lower-triangular ``l``."""
    n = l.shape[0]
    y = np.zeros(n)
    for i in range(n):
        s = b[i]
        for j in range(i):
            s -= l[i, j] * y[j]
        y[i] = s / l[i, i]
    return y


def reduce_first_coordinate(x, tol_rank=TOL_RANK):
    """First-coordinate reduction of a correlation matrix.

    Factors ``x = p m c_check m^T p^T`` with ``(c_check)_{2..d,2..d} = I``;
    the first row of ``c_check`` is ``(1, m_r^{-1} c_1^r, 0)``.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    fac = extended_cholesky(x[1:, 1:], tol_rank)
    r = fac.rank
    perm = np.concatenate(([0], fac.perm + 1))
    m = np.zeros((d, d))
    m[0, 0] = 1.0
    m[1:, 1:] = fac.m_full()
    c1r = x[0, 1:][fac.perm][:r]
    v = np.zeros(d - 1)
    if r:
        v[:r] = _forward_substitution(fac.m_r, c1r)
    c_check = np.eye(d)
    c_check[0, 1:] = v
    c_check[1:, 0] = v
    return ReducedForm(perm=perm, m=m, c_check=c_check, rank=r)


def rebuild_first_coordinate(reduced, first_row, base=None):
    """Invert ``reduce_first_coordinate`` for a new admissible first row.

    When ``base`` is given (the matrix that was reduced), its lower block
    is kept bit-exactly and only row/column 1 of the reduction frame is
    replaced; otherwise the full product ``p m c_check m^T p^T`` is formed.
    """
    d = reduced.perm.shape[0]
    v = np.asarray(first_row, dtype=np.float64).copy()
    r = reduced.rank
    v[r:] = 0.0  # components beyond the block rank cannot affect x
    new_row = reduced.m[1:, 1:] @ v
    if base is not None:
        out = np.asarray(base, dtype=np.float64).copy()
        inv = np.argsort(reduced.perm)
        full = np.concatenate(([1.0], new_row))[inv]
        out[0, :] = full
        out[:, 0] = full
        out[0, 0] = 1.0
        return out
    c_check = reduced.c_check.copy()
    c_check[0, 1:] = v
    c_check[1:, 0] = v
    inner = reduced.m @ c_check @ reduced.m.T
    inv = np.argsort(reduced.perm)
    return inner[np.ix_(inv, inv)]

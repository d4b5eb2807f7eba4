"""Sparse/dense linear-algebra substrate.

Compressed-sparse-row storage over complex scalars, sparse products,
Kronecker products, orthonormalization, a small dense LU oracle, and
Matrix Market I/O. Everything downstream (preconditioners, solvers,
reduction pipeline) works in terms of these primitives.

Scalars are complex double precision throughout: parameter values carry
imaginary parts, so real-only storage would be wrong. Real inputs are
promoted on construction.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp


class SingularMatrixError(np.linalg.LinAlgError):
    """Pivot is zero to working precision during a dense factorization."""


def as_csr(A, shape=None):
    """Coerce ``A`` to canonical complex CSR.

    Canonical means: sorted column indices within each row, duplicates
    summed, explicit zeros pruned. Accepts any scipy sparse matrix, a
    dense 2-D array, or (data, indices, indptr) style input already in
    CSR form.
    """
    if sp.issparse(A):
        M = A.tocsr().astype(np.complex128)
    else:
        arr = np.asarray(A, dtype=np.complex128)
        if arr.ndim != 2:
            raise ValueError("expected a 2-D matrix, got ndim=%d" % arr.ndim)
        M = sp.csr_matrix(arr, shape=shape)
    M.sum_duplicates()
    M.sort_indices()
    M.eliminate_zeros()
    return M


def csr_from_triplets(rows, cols, vals, shape):
    """Build canonical complex CSR from coordinate triplets."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.complex128)
    if rows.size and (rows.min() < 0 or rows.max() >= shape[0]
                      or cols.min() < 0 or cols.max() >= shape[1]):
        raise ValueError("triplet index out of bounds for shape %s" % (shape,))
    return as_csr(sp.coo_matrix((vals, (rows, cols)), shape=shape))


def identity_csr(n):
    return sp.identity(n, dtype=np.complex128, format="csr")


def as_block(X):
    """Coerce to a complex 2-D block of right-hand sides / solutions.

    1-D input becomes a single-column block.
    """
    arr = np.asarray(X, dtype=np.complex128)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError("expected vector or 2-D block, got ndim=%d" % arr.ndim)
    return arr


@dataclass
class SparsityPattern:
    """Per-column sorted row-index sets, the support of a sparse-inverse column.

    ``columns[j]`` lists the rows where column ``j`` may be nonzero.
    """

    nrows: int
    columns: list = field(default_factory=list)

    def __post_init__(self):
        cleaned = []
        for idx in self.columns:
            arr = np.unique(np.asarray(idx, dtype=np.int64))
            if arr.size and (arr[0] < 0 or arr[-1] >= self.nrows):
                raise ValueError("pattern row index out of range [0, %d)" % self.nrows)
            cleaned.append(arr)
        self.columns = cleaned

    @property
    def ncols(self):
        return len(self.columns)

    def max_fill(self):
        return max((len(c) for c in self.columns), default=0)


def full_pattern(n):
    """Pattern allowing every entry of every column (dense-inverse limit)."""
    rows = np.arange(n, dtype=np.int64)
    return SparsityPattern(n, [rows.copy() for _ in range(n)])


# ---------------------------------------------------------------------------
# products and norms
# ---------------------------------------------------------------------------

def spmv(A, x):
    """Sparse matrix-vector product y = A x, exactly as stored.

    Single-threaded and bitwise deterministic for fixed inputs.
    """
    A = as_csr(A)
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 1:
        raise ValueError("spmv expects a vector; use spmm for blocks")
    if x.shape[0] != A.shape[1]:
        raise ValueError("dimension mismatch: A is %dx%d, len(x)=%d"
                         % (A.shape[0], A.shape[1], x.shape[0]))
    return A @ x


def spmm(A, X):
    """Columnwise spmv: Y = A X for a dense block X."""
    A = as_csr(A)
    X = as_block(X)
    if X.shape[0] != A.shape[1]:
        raise ValueError("dimension mismatch: A is %dx%d, X has %d rows"
                         % (A.shape[0], A.shape[1], X.shape[0]))
    return A @ X


def frobenius_norm(A):
    """sqrt of the sum of squared moduli of the stored values."""
    A = as_csr(A)
    return float(np.linalg.norm(A.data)) if A.nnz else 0.0


def kron(A, B):
    """Standard Kronecker product of two sparse matrices.

    Convention pinned by the column-stacking identity
    vec(A Z E^T + E Z A^T) = (E (x) A + A (x) E) vec(Z),
    with vec stacking columns (Fortran order).
    """
    A = as_csr(A)
    B = as_csr(B)
    out_rows = A.shape[0] * B.shape[0]
    out_cols = A.shape[1] * B.shape[1]
    if out_rows > np.iinfo(np.int64).max or out_cols > np.iinfo(np.int64).max:
        raise OverflowError("Kronecker product dimensions overflow the index range")
    return as_csr(sp.kron(A, B, format="csr"))


def vec(Z):
    """Column-stacking vectorization of a matrix."""
    return np.asarray(Z, dtype=np.complex128).flatten(order="F")


def unvec(z, nrows, ncols):
    """Inverse of :func:`vec`."""
    z = np.asarray(z, dtype=np.complex128)
    if z.size != nrows * ncols:
        raise ValueError("cannot reshape %d entries to %dx%d" % (z.size, nrows, ncols))
    return z.reshape((nrows, ncols), order="F")


# ---------------------------------------------------------------------------
# orthonormalization
# ---------------------------------------------------------------------------

def extend_orthonormal_basis(Q, X, tol_drop=1e-10):
    """Orthonormalize the columns of X against an existing orthonormal Q.

    Modified Gram-Schmidt with one re-orthogonalization pass. A column is
    dropped when its norm after orthogonalization falls below
    ``tol_drop`` times its original norm (it carries no new direction).

    Returns the augmented basis (Q's columns first). ``Q`` may be None.
    """
    X = as_block(X)
    n = X.shape[0]
    kept = [] if Q is None else [np.ascontiguousarray(Q[:, j]) for j in range(Q.shape[1])]
    if Q is not None and Q.shape[0] != n:
        raise ValueError("basis and new columns have mismatched row counts")
    for j in range(X.shape[1]):
        v = X[:, j].astype(np.complex128, copy=True)
        norm0 = np.linalg.norm(v)
        if norm0 == 0.0:
            continue
        for _ in range(2):
            for q in kept:
                v -= q * np.vdot(q, v)
        nrm = np.linalg.norm(v)
        if nrm <= tol_drop * norm0:
            continue
        kept.append(v / nrm)
    if not kept:
        return np.zeros((n, 0), dtype=np.complex128)
    return np.column_stack(kept)


def mgs_orthonormalize(V, tol_drop=1e-10):
    """Orthonormalize the columns of V (conjugate-transpose inner product).

    Span is preserved up to dropped near-dependent columns.
    """
    return extend_orthonormal_basis(None, V, tol_drop=tol_drop)


# ---------------------------------------------------------------------------
# dense oracle
# ---------------------------------------------------------------------------

def dense_lu_solve(A, B):
    """Solve A X = B densely by LU with partial pivoting.

    Oracle-scale only (intended for n <= 500); raises
    :class:`SingularMatrixError` when a pivot is zero to working
    precision.
    """
    A = np.asarray(A, dtype=np.complex128)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("dense_lu_solve expects a square matrix")
    B = as_block(B)
    if B.shape[0] != A.shape[0]:
        raise ValueError("right-hand side has %d rows, matrix is %dx%d"
                         % (B.shape[0], A.shape[0], A.shape[1]))
    with warnings.catch_warnings():
        # singularity is detected below and raised as an exception
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=False)
    d = np.abs(np.diag(lu))
    if d.size and d.min() <= A.shape[0] * np.finfo(float).eps * max(d.max(), 1e-300):
        raise SingularMatrixError("matrix is singular to working precision")
    return scipy.linalg.lu_solve((lu, piv), B, check_finite=False)


# ---------------------------------------------------------------------------
# Matrix Market I/O
# ---------------------------------------------------------------------------

_MM_PRECISION = 17  # digits after the point; guarantees bit-exact text round trips


def write_matrix_market(A, path):
    """Write a sparse matrix in Matrix Market coordinate format.

    Complex values are written as "real imag" pairs with enough digits
    that read(write(A)) reproduces A bit-identically.
    """
    A = as_csr(A)
    scipy.io.mmwrite(str(path), A.tocoo(), field="complex",
                     precision=_MM_PRECISION, symmetry="general")


def read_matrix_market(path):
    """Read a Matrix Market file into canonical complex CSR.

    Symmetric/skew/hermitian-tagged files are expanded to full general
    storage. Raises ValueError for malformed headers or out-of-range
    indices (propagated from the parser).
    """
    M = scipy.io.mmread(str(path))
    if not sp.issparse(M):
        M = sp.csr_matrix(np.atleast_2d(M))
    return as_csr(M)


def write_dense_matrix_market(X, path):
    """Write a dense block in Matrix Market array format, full precision."""
    X = as_block(X)
    scipy.io.mmwrite(str(path), X, field="complex", precision=_MM_PRECISION)


def read_dense_matrix_market(path):
    """Read a Matrix Market array file as a dense complex block."""
    M = scipy.io.mmread(str(path))
    if sp.issparse(M):
        M = M.toarray()
    return as_block(M)

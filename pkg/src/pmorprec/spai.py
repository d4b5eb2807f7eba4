"""Sparse approximate inverse preconditioning.

A preconditioner P approximates A^-1 by minimizing ||I - A P||_F, which
decouples into one small least-squares problem per column of P over a
prescribed sparsity pattern. Column solves are independent, so the build
parallelizes trivially; the parallel build returns exactly the
sequential result.

The pattern policy is static: pattern of A union the diagonal, with at
most one augmentation pass (to a capped pattern of A^2) for columns
whose residual exceeds the threshold. Preconditioners are either an
explicit sparse matrix or a factored chain Q * base, applied as
successive sparse products without ever materializing the product.
"""

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .sparsecore import (
    SparsityPattern,
    as_block,
    as_csr,
    frobenius_norm,
    identity_csr,
    read_matrix_market,
    write_matrix_market,
)


class Preconditioner:
    """Right preconditioner: explicit sparse matrix or factored chain.

    Factored form represents P = Q * base and applies as Q @ (base @ V),
    two sparse products; the product matrix is only formed by
    :meth:`materialize`, for diagnostics.
    """

    def __init__(self, matrix=None, q=None, base=None):
        if matrix is not None:
            if q is not None or base is not None:
                raise ValueError("give either an explicit matrix or (q, base)")
            matrix = as_csr(matrix)
            if matrix.shape[0] != matrix.shape[1]:
                raise ValueError("explicit preconditioner must be square")
            self.matrix = matrix
            self.q = None
            self.base = None
        else:
            if q is None or base is None:
                raise ValueError("factored form needs both q and base")
            q = as_csr(q)
            if q.shape[0] != q.shape[1] or q.shape[0] != base.dim:
                raise ValueError("factor dimension does not match base preconditioner")
            self.matrix = None
            self.q = q
            self.base = base

    @property
    def kind(self):
        return "explicit" if self.matrix is not None else "factored"

    @property
    def dim(self):
        return self.matrix.shape[0] if self.matrix is not None else self.q.shape[0]

    @property
    def depth(self):
        """Number of sparse factors applied per application."""
        return 1 if self.matrix is not None else 1 + self.base.depth

    @classmethod
    def identity(cls, n):
        return cls(matrix=identity_csr(n))

    def apply(self, V):
        V = as_block(V)
        if V.shape[0] != self.dim:
            raise ValueError("preconditioner is %dx%d, block has %d rows"
                             % (self.dim, self.dim, V.shape[0]))
        if self.matrix is not None:
            return self.matrix @ V
        return self.q @ self.base.apply(V)

    def materialize(self):
        """Explicit sparse matrix of the full chain (diagnostics only)."""
        if self.matrix is not None:
            return self.matrix
        return as_csr(self.q @ self.base.materialize())

    def factors(self):
        """Chain factors outermost first: P = factors[0] @ ... @ factors[-1]."""
        if self.matrix is not None:
            return [self.matrix]
        return [self.q] + self.base.factors()

    def save(self, directory, stats_summary=None):
        """Persist the chain as ordered .mtx files plus a JSON sidecar."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = []
        for i, F in enumerate(self.factors()):
            name = "factor_%02d.mtx" % i
            write_matrix_market(F, directory / name)
            files.append(name)
        sidecar = {"kind": self.kind, "factors": files}
        if stats_summary:
            sidecar["stats"] = stats_summary
        with open(directory / "preconditioner.json", "w") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        with open(directory / "preconditioner.json") as fh:
            sidecar = json.load(fh)
        mats = [read_matrix_market(directory / name) for name in sidecar["factors"]]
        pre = cls(matrix=mats[-1])
        for Q in reversed(mats[:-1]):
            pre = cls(q=Q, base=pre)
        return pre


@dataclass
class SpaiConfig:
    """Knobs of the sparse-approximate-inverse build.

    ep : per-column residual threshold that triggers the single
         augmentation pass.
    pattern_level : 0 keeps the pattern of A (plus diagonal); 1 allows
         one augmentation to a capped pattern of A^2.
    max_fill_per_column : cap on the augmented pattern size per column.
    """

    ep: float = 1e-4
    pattern_level: int = 1
    max_fill_per_column: int = 80

    def __post_init__(self):
        if self.ep <= 0:
            raise ValueError("ep must be positive")
        if self.pattern_level not in (0, 1):
            raise ValueError("pattern_level must be 0 or 1")


@dataclass
class BuildStats:
    """Per-column diagnostics of a build (residuals are post-solve)."""

    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    augmented_columns: int = 0
    rank_deficient_columns: int = 0
    seconds: float = 0.0

    def summary(self):
        res = np.asarray(self.residuals, dtype=float)
        return {
            "columns": int(res.size),
            "max_residual": float(res.max()) if res.size else 0.0,
            "mean_residual": float(res.mean()) if res.size else 0.0,
            "augmented_columns": int(self.augmented_columns),
            "rank_deficient_columns": int(self.rank_deficient_columns),
            "seconds": float(self.seconds),
        }


# ---------------------------------------------------------------------------
# patterns
# ---------------------------------------------------------------------------

def _column_support(A_csc, j):
    return A_csc.indices[A_csc.indptr[j]:A_csc.indptr[j + 1]]


def spai_pattern(A, level=0, max_fill_per_column=80):
    """A-priori sparsity pattern for the approximate-inverse columns.

    Level 0 is the pattern of A union the diagonal. Level 1 adds the
    pattern of A^2, capped per column at ``max_fill_per_column`` entries
    keeping the largest |A^2| magnitudes (level-0 entries always
    retained).
    """
    A = as_csr(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("pattern requires a square matrix")
    n = A.shape[0]
    A_csc = A.tocsc()
    cols = []
    abs_csc = None
    if level >= 1:
        abs_csc = sp.csc_matrix(
            (np.abs(A_csc.data), A_csc.indices.copy(), A_csc.indptr.copy()),
            shape=A.shape)
    for j in range(n):
        base = np.union1d(_column_support(A_csc, j), [j])
        if level == 0:
            cols.append(base)
            continue
        cols.append(_augmented_column(abs_csc, j, base, max_fill_per_column))
    return SparsityPattern(n, cols)


def _augmented_column(abs_csc, j, base, max_fill):
    """Level-1 support of column j: base union top-|A^2| candidates."""
    weights = abs_csc @ abs_csc[:, [j]]
    cand = weights.tocoo()
    rows, vals = cand.row, cand.data
    extra_mask = ~np.isin(rows, base)
    rows, vals = rows[extra_mask], vals[extra_mask]
    room = max(max_fill - base.size, 0)
    if rows.size > room:
        # deterministic: sort by (-magnitude, row index)
        order = np.lexsort((rows, -vals))[:room]
        rows = rows[order]
    return np.union1d(base, rows)


# ---------------------------------------------------------------------------
# column least squares
# ---------------------------------------------------------------------------

def _ls_over_support(A_csc, support, target_rows, target_vals):
    """Minimize ||t - A z||_2 with z supported on ``support``.

    The dense subproblem lives on the rows touched by the supporting
    columns, unioned with the target's own rows (whose mismatch must be
    charged to the residual). Returns (coefficients, residual norm,
    rank_deficient flag).
    """
    touched = [target_rows]
    for k in support:
        touched.append(_column_support(A_csc, k))
    J = np.unique(np.concatenate(touched)) if touched else np.zeros(0, dtype=np.int64)
    if support.size == 0 or J.size == 0:
        return np.zeros(0, dtype=np.complex128), float(np.linalg.norm(target_vals)), False
    M = np.zeros((J.size, support.size), dtype=np.complex128)
    for c, k in enumerate(support):
        lo, hi = A_csc.indptr[k], A_csc.indptr[k + 1]
        M[np.searchsorted(J, A_csc.indices[lo:hi]), c] = A_csc.data[lo:hi]
    rhs = np.zeros(J.size, dtype=np.complex128)
    rhs[np.searchsorted(J, target_rows)] = target_vals
    # pivoted-QR least squares; minimum-norm solution when rank deficient
    coef, _, rank, _ = scipy.linalg.lstsq(M, rhs, lapack_driver="gelsy",
                                          check_finite=False)
    resid = float(np.linalg.norm(rhs - M @ coef))
    return coef, resid, rank < support.size


def spai_column(A, i, pattern_i):
    """Exact least-squares column of the approximate inverse.

    Minimizes ||e_i - A p||_2 over the support ``pattern_i``. Returns
    (support, values, residual, rank_deficient).
    """
    A = as_csr(A)
    support = np.unique(np.asarray(pattern_i, dtype=np.int64))
    if support.size == 0:
        raise ValueError("column pattern must be nonempty")
    A_csc = A.tocsc()
    target_rows = np.array([i], dtype=np.int64)
    target_vals = np.array([1.0 + 0.0j])
    coef, resid, deficient = _ls_over_support(A_csc, support, target_rows, target_vals)
    return support, coef, resid, deficient


def _build_columns(A_csc, targets_csc, pattern, cfg, abs_csc, columns):
    """Solve a range of columns; shared by sequential and threaded builds.

    ``targets_csc`` holds the column targets (identity for a plain build,
    a reference matrix for an update build).
    """
    out = []
    for i in columns:
        support = pattern.columns[i]
        t_lo, t_hi = targets_csc.indptr[i], targets_csc.indptr[i + 1]
        t_rows = targets_csc.indices[t_lo:t_hi]
        t_vals = targets_csc.data[t_lo:t_hi]
        coef, resid, deficient = _ls_over_support(A_csc, support, t_rows, t_vals)
        augmented = False
        if resid > cfg.ep and cfg.pattern_level >= 1:
            support = _augmented_column(abs_csc, i, support, cfg.max_fill_per_column)
            coef, resid, deficient = _ls_over_support(A_csc, support, t_rows, t_vals)
            augmented = True
        out.append((i, support, coef, resid, deficient, augmented))
    return out


def _assemble_and_stats(n, results, t0):
    rows, cols, vals = [], [], []
    residuals = np.zeros(n)
    augmented = 0
    deficient = 0
    for i, support, coef, resid, is_def, is_aug in results:
        rows.append(support)
        cols.append(np.full(support.size, i, dtype=np.int64))
        vals.append(coef)
        residuals[i] = resid
        augmented += is_aug
        deficient += is_def
    P = as_csr(sp.coo_matrix(
        (np.concatenate(vals) if vals else np.zeros(0, dtype=np.complex128),
         (np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64),
          np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64))),
        shape=(n, n)))
    stats = BuildStats(residuals=residuals, augmented_columns=augmented,
                       rank_deficient_columns=deficient,
                       seconds=time.perf_counter() - t0)
    return P, stats


def _run_column_solves(A, targets, pattern, cfg, threads):
    n = A.shape[0]
    A_csc = A.tocsc()
    targets_csc = targets.tocsc()
    abs_csc = None
    if cfg.pattern_level >= 1:
        abs_csc = sp.csc_matrix(
            (np.abs(A_csc.data), A_csc.indices.copy(), A_csc.indptr.copy()),
            shape=A.shape)
    t0 = time.perf_counter()
    if threads <= 1:
        results = _build_columns(A_csc, targets_csc, pattern, cfg, abs_csc, range(n))
    else:
        chunks = np.array_split(np.arange(n), threads)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = pool.map(
                lambda c: _build_columns(A_csc, targets_csc, pattern, cfg, abs_csc, c),
                chunks)
            results = [item for part in parts for item in part]
    results.sort(key=lambda r: r[0])
    return _assemble_and_stats(n, results, t0)


def spai_build(A, cfg=None, pattern=None, threads=1):
    """Build an explicit sparse approximate inverse of A.

    Per column, if the residual exceeds ``cfg.ep`` and the pattern level
    permits, the pattern is augmented once and the column re-solved.
    Passing an explicit ``pattern`` skips the pattern policy entirely
    (useful for full-pattern reference builds). Degenerate columns are
    flagged in the stats, never fatal.

    Returns (Preconditioner, BuildStats).
    """
    A = as_csr(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("spai_build requires a square matrix")
    cfg = cfg or SpaiConfig()
    explicit_pattern = pattern is not None
    if pattern is None:
        pattern = spai_pattern(A, level=0,
                               max_fill_per_column=cfg.max_fill_per_column)
    effective = cfg if not explicit_pattern else SpaiConfig(
        ep=cfg.ep, pattern_level=0, max_fill_per_column=cfg.max_fill_per_column)
    P, stats = _run_column_solves(A, identity_csr(A.shape[0]), pattern,
                                  effective, threads)
    return Preconditioner(matrix=P), stats


def quality(A, P):
    """||I - A * P||_F with the chain materialized for this diagnostic only."""
    A = as_csr(A)
    Pm = P.materialize() if isinstance(P, Preconditioner) else as_csr(P)
    if Pm.shape[0] != A.shape[1]:
        raise ValueError("preconditioner does not conform with the matrix")
    return frobenius_norm(identity_csr(A.shape[0]) - A @ Pm)

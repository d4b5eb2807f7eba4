"""GCRO-style Krylov solvers with right preconditioning, single and block.

The solver maintains an outer pair (U, C) with M U = C and C
orthonormal, where M is the right-preconditioned operator A P. Each
cycle runs an inner (block) Arnoldi recurrence on the projected operator
(I - C C^H) M and minimizes every right-hand side's residual over
span(U) + the inner Krylov space, via one small dense least-squares
problem per step. Cycle solutions feed the outer space (oldest
directions dropped beyond the cap), so restarts do not forget.

Right preconditioning leaves the residual of the original system
unchanged: r = b - A x with x = P x_tilde. Convergence is always
certified against the true residual, recomputed unpreconditioned from
the recovered x at the end of every cycle.

Block right-hand sides advance in a shared subspace. Rank-deficient
blocks are narrowed by a pivoted-QR deflation test on the R diagonal;
columns that converge early stop seeding new directions but keep their
final residuals in the report.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .sparsecore import as_block, as_csr
from .spai import Preconditioner


class SolverBreakdown(RuntimeError):
    """No new Krylov direction can be built while the residual is above
    tolerance (zero inner product / exhausted subspace)."""


@dataclass
class SolverConfig:
    tol: float = 1e-10
    max_iters: int = 1000
    outer_space_dim: int = 10
    inner_restart: int = 50
    deflation_tol: float = 1e-12

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.inner_restart < 1:
            raise ValueError("inner_restart must be at least 1")


@dataclass
class SolveReport:
    iterations: int = 0
    converged: bool = False
    residual_history: list = field(default_factory=list)
    matvec_count: int = 0
    precond_apply_count: int = 0
    wall_time: float = 0.0

    @property
    def final_residuals(self):
        return self.residual_history[-1] if self.residual_history else None


def apply_preconditioner(P, V):
    """Apply a right preconditioner to a block.

    Explicit form returns P @ V; a factored chain applies its factors as
    successive sparse products, never materializing their product.
    """
    if not isinstance(P, Preconditioner):
        raise TypeError("expected a Preconditioner")
    return P.apply(as_block(V))


def _qr_deflate(Z, rel_tol):
    """Rank-revealing QR: Z = Q @ coords with near-dependent columns dropped.

    A column is dropped when its pivoted R diagonal falls below
    ``rel_tol`` times the largest diagonal.
    """
    n, m = Z.shape
    if m == 0:
        return np.zeros((n, 0), dtype=np.complex128), np.zeros((0, 0), dtype=np.complex128)
    Q, Rf, piv = scipy.linalg.qr(Z, mode="economic", pivoting=True)
    d = np.abs(np.diag(Rf))
    if d.size == 0 or d[0] == 0.0:
        return np.zeros((n, 0), dtype=np.complex128), np.zeros((0, m), dtype=np.complex128)
    rank = int(np.sum(d > rel_tol * d[0]))
    inv = np.empty_like(piv)
    inv[piv] = np.arange(piv.size)
    return np.ascontiguousarray(Q[:, :rank]), np.ascontiguousarray(Rf[:rank][:, inv])


def _safe_rel(norms, refs):
    out = np.zeros_like(norms)
    nz = refs > 0
    out[nz] = norms[nz] / refs[nz]
    return out


def block_gcro_solve(A, B, P=None, cfg=None):
    """Solve A X = B for all columns of B simultaneously.

    Returns (X, SolveReport). On convergence every column satisfies
    ||b_i - A x_i||_2 / ||b_i||_2 <= cfg.tol as a true residual. Hitting
    ``max_iters`` returns the best iterate with ``converged=False``;
    an exhausted subspace with no possible progress raises
    :class:`SolverBreakdown`.
    """
    cfg = cfg or SolverConfig()
    A = as_csr(A)
    if A.shape[0] != A.shape[1]:
        raise ValueError("system matrix must be square")
    n = A.shape[0]
    B = as_block(B)
    if B.shape[0] != n:
        raise ValueError("right-hand side has %d rows, matrix is %dx%d"
                         % (B.shape[0], n, n))
    if P is not None and not isinstance(P, Preconditioner):
        raise TypeError("P must be a Preconditioner or None")
    if P is not None and P.dim != n:
        raise ValueError("preconditioner dimension %d does not match system %d"
                         % (P.dim, n))
    s = B.shape[1]
    t_start = time.perf_counter()
    report = SolveReport()

    bnorms = np.linalg.norm(B, axis=0)
    X = np.zeros((n, s), dtype=np.complex128)
    Xt = np.zeros((n, s), dtype=np.complex128)   # preconditioned variable
    R = B.copy()
    last_rel = np.where(bnorms > 0, 1.0, 0.0)
    report.residual_history.append(last_rel.copy())
    active = np.flatnonzero(bnorms > 0)

    def op(Vblk):
        if P is not None:
            W = P.apply(Vblk)
            report.precond_apply_count += Vblk.shape[1]
        else:
            W = Vblk
        report.matvec_count += Vblk.shape[1]
        return A @ W

    U = None   # outer directions in the preconditioned variable
    C = None   # their images under M, orthonormal
    # a cycle may overshoot the restart length by up to two block widths
    cap = cfg.inner_restart + 2 * s + 2

    while active.size and report.iterations < cfg.max_iters:
        na = active.size
        Ract = R[:, active]
        start_rel = _safe_rel(np.linalg.norm(Ract, axis=0), bnorms[active])
        k = 0 if C is None else C.shape[1]
        if k:
            rhs_c = C.conj().T @ Ract
            Z0 = Ract - C @ rhs_c
        else:
            rhs_c = np.zeros((0, na), dtype=np.complex128)
            Z0 = Ract
        V1, S0 = _qr_deflate(Z0, cfg.deflation_tol)
        bs = V1.shape[1]
        if bs == 0:
            raise SolverBreakdown(
                "projected residual block vanished with %d unconverged column(s)" % na)

        Vmat = np.zeros((n, cap), dtype=np.complex128)
        Vmat[:, :bs] = V1
        Hb = np.zeros((cap, cap), dtype=np.complex128)
        Bmat = np.zeros((k, cap), dtype=np.complex128)
        rhs_v = np.zeros((cap, na), dtype=np.complex128)
        rhs_v[:bs] = S0

        m = 0              # columns with images (least-squares unknowns)
        total = bs         # columns allocated in Vmat
        Y = None
        exhausted = False
        cycle_converged = False

        while (report.iterations < cfg.max_iters and not cycle_converged
               and not exhausted and m < cfg.inner_restart):
            q0, q1 = m, total
            W = op(Vmat[:, q0:q1])
            report.iterations += 1
            if k:
                Bblk = C.conj().T @ W
                Bmat[:, q0:q1] = Bblk
                W = W - C @ Bblk
            for _ in range(2):   # block Gram-Schmidt with one re-orth pass
                Hcorr = Vmat[:, :total].conj().T @ W
                W = W - Vmat[:, :total] @ Hcorr
                Hb[:total, q0:q1] += Hcorr
            Qn, Rn = _qr_deflate(W, cfg.deflation_tol)
            bs_next = Qn.shape[1]
            Vmat[:, total:total + bs_next] = Qn
            Hb[total:total + bs_next, q0:q1] = Rn
            m = total
            total += bs_next

            rows_v = total
            G = np.zeros((k + rows_v, k + m), dtype=np.complex128)
            if k:
                G[:k, :k] = np.eye(k)
                G[:k, k:] = Bmat[:, :m]
            G[k:, k:] = Hb[:rows_v, :m]
            rhs = np.vstack([rhs_c, rhs_v[:rows_v]])
            Y, _, _, _ = np.linalg.lstsq(G, rhs, rcond=None)
            est = _safe_rel(np.linalg.norm(rhs - G @ Y, axis=0), bnorms[active])
            last_rel[active] = est
            report.residual_history.append(last_rel.copy())
            cycle_converged = bool(np.all(est <= cfg.tol))
            exhausted = bs_next == 0

        if Y is None:   # max_iters hit before a single step of this cycle
            break

        dXt = Vmat[:, :m] @ Y[k:]
        if k:
            dXt += U @ Y[:k]
        Xt[:, active] += dXt
        if P is not None:
            Xact = P.apply(Xt[:, active])
            report.precond_apply_count += na
        else:
            Xact = Xt[:, active]
        X[:, active] = Xact
        Rtrue = B[:, active] - A @ Xact
        report.matvec_count += na
        R[:, active] = Rtrue
        true_rel = _safe_rel(np.linalg.norm(Rtrue, axis=0), bnorms[active])
        last_rel[active] = true_rel
        report.residual_history.append(last_rel.copy())

        still = true_rel > cfg.tol
        if exhausted and np.all(still) and np.all(true_rel >= start_rel * (1 - 1e-10)):
            raise SolverBreakdown(
                "Krylov subspace exhausted without residual reduction "
                "(%d column(s) above tolerance)" % int(np.sum(still)))

        # fold the cycle's solution directions into the outer space
        img_coords = G @ Y
        images = Vmat[:, :m + (total - m)] @ img_coords[k:]
        if k:
            images += C @ img_coords[:k]
        for col in range(na):
            w = images[:, col].copy()
            z = dXt[:, col].copy()
            w_norm0 = np.linalg.norm(w)
            if w_norm0 == 0.0:
                continue
            if C is not None:
                for _ in range(2):
                    h = C.conj().T @ w
                    w -= C @ h
                    z -= U @ h
            nw = np.linalg.norm(w)
            if nw <= 1e-10 * w_norm0:
                continue
            c_new = (w / nw)[:, None]
            u_new = (z / nw)[:, None]
            C = c_new if C is None else np.hstack([C, c_new])
            U = u_new if U is None else np.hstack([U, u_new])
        if C is not None and C.shape[1] > cfg.outer_space_dim:
            C = np.ascontiguousarray(C[:, -cfg.outer_space_dim:])
            U = np.ascontiguousarray(U[:, -cfg.outer_space_dim:])

        active = active[still]

    report.converged = active.size == 0
    report.wall_time = time.perf_counter() - t_start
    return X, report


def gcro_solve(A, b, P=None, cfg=None):
    """Single right-hand-side interface; the 1-column case of the block
    solver, iterate for iterate.

    Returns (x, SolveReport) with x a vector and scalar entries in the
    residual history.
    """
    b = np.asarray(b, dtype=np.complex128)
    if b.ndim != 1:
        raise ValueError("gcro_solve expects a vector; use block_gcro_solve for blocks")
    X, report = block_gcro_solve(A, b[:, None], P=P, cfg=cfg)
    report.residual_history = [float(r[0]) for r in report.residual_history]
    return X[:, 0], report

import numpy as np
import pytest
import scipy.sparse as sp

from pmorprec.sparsecore import as_csr, frobenius_norm, full_pattern, identity_csr
from pmorprec.spai import (
    Preconditioner,
    SpaiConfig,
    quality,
    spai_build,
    spai_column,
    spai_pattern,
)
from conftest import random_sparse, well_conditioned


class TestPattern:
    def test_diagonal_matrix_level0(self):
        A = as_csr(np.diag([1.0, 2.0, 3.0]))
        pat = spai_pattern(A, level=0)
        assert all(np.array_equal(pat.columns[j], [j]) for j in range(3))

    def test_tridiagonal_level1_is_pentadiagonal(self):
        n = 9
        A = as_csr(sp.diags([np.ones(n - 1), 2 * np.ones(n), np.ones(n - 1)],
                            offsets=(-1, 0, 1)))
        pat = spai_pattern(A, level=1, max_fill_per_column=50)
        for j in range(2, n - 2):
            assert np.array_equal(pat.columns[j], np.arange(j - 2, j + 3))

    def test_level1_contains_level0(self):
        A = random_sparse(25, density=0.15, seed=2)
        p0 = spai_pattern(A, level=0)
        p1 = spai_pattern(A, level=1, max_fill_per_column=100)
        for c0, c1 in zip(p0.columns, p1.columns):
            assert np.all(np.isin(c0, c1))

    def test_cap_respected(self):
        A = random_sparse(40, density=0.4, seed=3)
        pat = spai_pattern(A, level=1, max_fill_per_column=12)
        base = spai_pattern(A, level=0)
        for j, col in enumerate(pat.columns):
            assert col.size <= max(12, base.columns[j].size)


class TestColumn:
    def test_identity_column(self):
        support, vals, resid, deficient = spai_column(identity_csr(5), 2, [2])
        assert np.array_equal(support, [2])
        assert vals[0] == 1.0 and resid <= 1e-15 and not deficient

    def test_diagonal_inverse_entry(self):
        A = as_csr(np.diag([2.0, 4.0]))
        support, vals, resid, _ = spai_column(A, 1, [1])
        assert abs(vals[0] - 0.25) <= 1e-15
        assert resid <= 1e-15

    def test_full_pattern_matches_dense_inverse(self):
        A = well_conditioned(8, seed=5)
        inv = np.linalg.inv(A.toarray())
        for i in range(8):
            support, vals, resid, _ = spai_column(A, i, np.arange(8))
            assert np.linalg.norm(vals - inv[:, i]) <= 1e-12 * np.linalg.norm(inv[:, i])

    def test_column_optimality_random_perturbations(self):
        # no same-support vector beats the least-squares column
        A = random_sparse(20, density=0.25, seed=7, shift=2.0)
        rng = np.random.default_rng(11)
        pat = spai_pattern(A, level=0)
        Ad = A.toarray()
        for i in (0, 7, 13):
            support, vals, resid, _ = spai_column(A, i, pat.columns[i])
            e = np.zeros(20, dtype=complex)
            e[i] = 1.0
            for _ in range(100):
                z = np.zeros(20, dtype=complex)
                z[support] = vals + 0.1 * (rng.standard_normal(support.size)
                                           + 1j * rng.standard_normal(support.size))
                assert resid <= np.linalg.norm(e - Ad @ z) + 1e-12

    def test_residual_never_exceeds_one(self):
        A = random_sparse(15, density=0.2, seed=13)
        pat = spai_pattern(A, level=0)
        for i in range(15):
            _, _, resid, _ = spai_column(A, i, pat.columns[i])
            assert resid <= 1.0 + 1e-12


class TestBuild:
    def test_identity(self):
        P, stats = spai_build(identity_csr(6))
        assert quality(identity_csr(6), P) <= 1e-14
        assert stats.residuals.max() <= 1e-14

    def test_diagonal(self):
        d = np.array([2.0, 5.0, 0.5, 8.0])
        P, _ = spai_build(as_csr(np.diag(d)))
        assert np.allclose(P.matrix.diagonal(), 1.0 / d, rtol=0, atol=1e-15)

    def test_full_pattern_reproduces_inverse(self):
        A = well_conditioned(50, seed=17)
        P, _ = spai_build(A, pattern=full_pattern(50))
        inv = np.linalg.inv(A.toarray())
        assert np.linalg.norm(P.matrix.toarray() - inv) <= 1e-10 * np.linalg.norm(inv)
        assert quality(A, P) <= 1e-10

    def test_order_independence(self):
        # assembling per-column solves in any order gives the same matrix
        A = random_sparse(18, density=0.3, seed=19, shift=1.0)
        cfg = SpaiConfig(pattern_level=0)
        P, _ = spai_build(A, cfg)
        pat = spai_pattern(A, level=0)
        order = np.random.default_rng(5).permutation(18)
        cols = {}
        for i in order:
            support, vals, _, _ = spai_column(A, int(i), pat.columns[i])
            cols[int(i)] = (support, vals)
        rows = np.concatenate([cols[i][0] for i in range(18)])
        cidx = np.concatenate([np.full(cols[i][0].size, i) for i in range(18)])
        vals = np.concatenate([cols[i][1] for i in range(18)])
        P2 = as_csr(sp.coo_matrix((vals, (rows, cidx)), shape=(18, 18)))
        assert np.array_equal(P.matrix.data, P2.data)
        assert np.array_equal(P.matrix.indices, P2.indices)

    def test_parallel_build_identical(self):
        A = random_sparse(60, density=0.1, seed=23, shift=1.0)
        P1, _ = spai_build(A, threads=1)
        P4, _ = spai_build(A, threads=4)
        assert np.array_equal(P1.matrix.data, P4.matrix.data)
        assert np.array_equal(P1.matrix.indices, P4.matrix.indices)
        assert np.array_equal(P1.matrix.indptr, P4.matrix.indptr)

    def test_augmentation_reduces_residuals(self):
        A = well_conditioned(40, seed=29, density=0.15)
        P0, s0 = spai_build(A, SpaiConfig(ep=1e-4, pattern_level=0))
        P1, s1 = spai_build(A, SpaiConfig(ep=1e-4, pattern_level=1))
        assert s1.augmented_columns > 0
        assert s1.residuals.max() <= s0.residuals.max() + 1e-14
        assert quality(A, P1) <= quality(A, P0) + 1e-12

    def test_degenerate_column_flagged_not_fatal(self):
        # a zero column makes its subproblem rank deficient
        A = as_csr(np.array([[1.0, 0.0], [0.0, 0.0]]))
        P, stats = spai_build(A, SpaiConfig(pattern_level=0))
        assert stats.rank_deficient_columns >= 1


class TestQuality:
    def test_exact_inverse_is_zero(self):
        A = well_conditioned(12, seed=31)
        P = Preconditioner(matrix=as_csr(np.linalg.inv(A.toarray())))
        assert quality(A, P) <= 1e-12

    def test_zero_preconditioner_is_sqrt_n(self):
        A = well_conditioned(9, seed=37)
        P = Preconditioner(matrix=as_csr(np.zeros((9, 9))))
        assert quality(A, P) == pytest.approx(3.0, abs=1e-14)

    def test_spai_output_at_most_sqrt_n(self):
        A = random_sparse(30, density=0.1, seed=41)
        P, _ = spai_build(A)
        assert quality(A, P) <= np.sqrt(30) + 1e-12


class TestPreconditionerObject:
    def test_explicit_apply(self):
        P = Preconditioner.identity(4)
        V = np.arange(8, dtype=float).reshape(4, 2)
        assert np.array_equal(P.apply(V), V.astype(complex))

    def test_factored_identity_q(self):
        base = Preconditioner(matrix=as_csr(np.diag([2.0, 3.0])))
        P = Preconditioner(q=identity_csr(2), base=base)
        V = np.eye(2)
        assert np.allclose(P.apply(V), np.diag([2.0, 3.0]))

    def test_factored_matches_explicit_product(self):
        Q = random_sparse(10, density=0.3, seed=43)
        M = random_sparse(10, density=0.3, seed=47)
        P = Preconditioner(q=Q, base=Preconditioner(matrix=M))
        V = np.random.default_rng(0).standard_normal((10, 3))
        direct = (Q @ M) @ V
        assert np.linalg.norm(P.apply(V) - direct) <= 1e-13 * np.linalg.norm(direct)
        assert P.depth == 2

    def test_persistence_roundtrip(self, tmp_path):
        Q = random_sparse(6, density=0.4, seed=53)
        M = random_sparse(6, density=0.4, seed=59)
        P = Preconditioner(q=Q, base=Preconditioner(matrix=M))
        P.save(tmp_path / "pre", stats_summary={"note": 1})
        P2 = Preconditioner.load(tmp_path / "pre")
        assert P2.kind == "factored" and P2.depth == 2
        assert np.array_equal(P2.materialize().data, P.materialize().data)

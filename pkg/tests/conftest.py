import numpy as np
import pytest
import scipy.sparse as sp

from pmorprec.sparsecore import as_csr


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_sparse(n, m=None, density=0.1, seed=0, complex_values=True, shift=0.0):
    """Random canonical CSR test matrix, optionally diagonally shifted."""
    m = n if m is None else m
    rs = np.random.RandomState(seed)
    A = sp.random(n, m, density=density, random_state=rs, format="csr")
    if complex_values:
        A = A.astype(np.complex128) + 1j * sp.random(
            n, m, density=density, random_state=np.random.RandomState(seed + 1),
            format="csr")
    if shift and n == m:
        A = A + shift * sp.identity(n)
    return as_csr(A)


def well_conditioned(n, seed=0, density=0.08):
    """Sparse complex matrix with a dominant diagonal shift (easy to solve)."""
    return random_sparse(n, density=density, seed=seed, shift=4.0)

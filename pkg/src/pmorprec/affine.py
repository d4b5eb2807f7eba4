"""Affine parametric matrix families A(p) = A0 + p_1 A_1 + ... + p_m A_m.

A family bundles the constant term A0 (implicit coefficient 1), the
parameter-weighted terms, a right-hand side block and an output map.
Evaluation at an expansion point assembles the sparse sum over a cached
union pattern, so repeated evaluations at new points reuse the symbolic
structure.

Also provides the micro-gyroscope parameter map (frequency, rotation
speed, damping coefficients and a geometry scaling collapse into eleven
scalar coefficients) and the inter-point difference-norm analysis used
to judge when preconditioner reuse pays off.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .sparsecore import (
    as_block,
    as_csr,
    frobenius_norm,
    identity_csr,
    read_dense_matrix_market,
    read_matrix_market,
    write_dense_matrix_market,
    write_matrix_market,
)

# entries whose modulus falls below this are dropped after assembly;
# only true zeros, never a drop tolerance
_PRUNE_THRESHOLD = 1e-300


@dataclass(frozen=True)
class ExpansionPoint:
    """A fixed tuple of complex parameter values, with a label for reports."""

    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "values",
                           np.atleast_1d(np.asarray(self.values, dtype=np.complex128)))

    def __len__(self):
        return self.values.shape[0]


def _point_values(point):
    if isinstance(point, ExpansionPoint):
        return point.values
    return np.atleast_1d(np.asarray(point, dtype=np.complex128))


class AffineFamily:
    """Affine family of square sparse matrices sharing one dimension.

    Parameters
    ----------
    terms : sequence of sparse matrices
        [A0, A1, ..., Am]; A0 carries no parameter. At least two terms.
    rhs : array_like, optional
        Input block B (n x d_I).
    output : array_like, optional
        Output map C (n x d_O); transfer functions use C^T x.
    """

    def __init__(self, terms, rhs=None, output=None):
        terms = [as_csr(T) for T in terms]
        if len(terms) < 2:
            raise ValueError("an affine family needs at least two terms")
        n = terms[0].shape[0]
        for T in terms:
            if T.shape != (n, n):
                raise ValueError("all terms must be square with equal dimension; "
                                 "got %s vs %s" % (T.shape, (n, n)))
        self.terms = terms
        self.rhs = as_block(rhs) if rhs is not None else None
        self.output = as_block(output) if output is not None else None
        self._union = None  # (indptr, indices, slot maps) built lazily

    @property
    def dim(self):
        return self.terms[0].shape[0]

    @property
    def n_params(self):
        return len(self.terms) - 1

    # -- assembly ----------------------------------------------------------

    def _union_structure(self):
        if self._union is not None:
            return self._union
        n = self.dim
        S = None
        for T in self.terms:
            ones = sp.csr_matrix(
                (np.ones(T.nnz), T.indices.copy(), T.indptr.copy()), shape=T.shape)
            S = ones if S is None else S + ones
        S.sort_indices()
        slot_maps = []
        for T in self.terms:
            pos = np.empty(T.nnz, dtype=np.int64)
            for i in range(n):
                lo, hi = S.indptr[i], S.indptr[i + 1]
                tlo, thi = T.indptr[i], T.indptr[i + 1]
                pos[tlo:thi] = lo + np.searchsorted(S.indices[lo:hi], T.indices[tlo:thi])
            slot_maps.append(pos)
        self._union = (S.indptr.copy(), S.indices.copy(), slot_maps)
        return self._union

    def evaluate(self, point):
        """Assemble A0 + sum_j point[j] * A_{j+1} as canonical CSR."""
        coeffs = _point_values(point)
        if coeffs.shape[0] != self.n_params:
            raise ValueError("point has %d components, family has %d parameters"
                             % (coeffs.shape[0], self.n_params))
        indptr, indices, slot_maps = self._union_structure()
        data = np.zeros(indices.shape[0], dtype=np.complex128)
        np.add.at(data, slot_maps[0], self.terms[0].data)
        for j, c in enumerate(coeffs):
            if c != 0:
                np.add.at(data, slot_maps[j + 1], c * self.terms[j + 1].data)
        A = sp.csr_matrix((data, indices.copy(), indptr.copy()),
                          shape=(self.dim, self.dim))
        A.data[np.abs(A.data) < _PRUNE_THRESHOLD] = 0
        A.eliminate_zeros()
        return A


def evaluate(family, point):
    """Module-level alias for :meth:`AffineFamily.evaluate`."""
    return family.evaluate(point)


# ---------------------------------------------------------------------------
# gyroscope parameter map
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RawGyroParams:
    """Physical gyroscope parameters before the scalar-coefficient map.

    s is the complex frequency, theta the rotation speed, alpha/beta the
    proportional damping coefficients, d the geometry scaling (d != 0).
    """

    s: complex
    theta: float
    alpha: float = 0.0
    beta: float = 0.0
    d: float = 1.0


# positions of the coefficients that stay active when alpha = beta = 0
GYRO_ACTIVE_COMPONENTS = (0, 1, 2, 3, 9, 10)


def gyro_point(raw, label=""):
    """Map raw gyroscope parameters to the eleven-component point.

    Components: (s^2, s^2 d, s th, s th d, s al, s al d, s be, s be / d,
    s be d, 1/d, d). With alpha = beta = 0 components 5-9 vanish and six
    parameters remain active.
    """
    if raw.d == 0:
        raise ValueError("geometry scaling d must be nonzero")
    s = complex(raw.s)
    d = float(raw.d)
    s2 = s * s
    sth = s * raw.theta
    sal = s * raw.alpha
    sbe = s * raw.beta
    values = np.array(
        [s2, s2 * d, sth, sth * d, sal, sal * d, sbe, sbe / d, sbe * d, 1.0 / d, d],
        dtype=np.complex128)
    return ExpansionPoint(values, label=label)


def gyro_point_active(raw, label=""):
    """Six active components of :func:`gyro_point` (alpha = beta = 0 case)."""
    full = gyro_point(raw, label=label)
    return ExpansionPoint(full.values[list(GYRO_ACTIVE_COMPONENTS)], label=label)


# ---------------------------------------------------------------------------
# difference analysis
# ---------------------------------------------------------------------------

class DifferenceRow(NamedTuple):
    label: str
    norm_identity_minus: float   # ||I - A(l)||_F
    norm_first_minus: float      # ||A(1) - A(l)||_F


def pairwise_difference_norms(family, points):
    """Quantify how far each system is from identity vs. from the first system.

    Preconditioner reuse pays off exactly when the second column is much
    smaller than the first: building a sparse inverse from scratch fights
    ||I - A(l)||, while an update only fights ||A(1) - A(l)||.
    """
    if not points:
        raise ValueError("need at least one expansion point")
    eye = identity_csr(family.dim)
    A1 = family.evaluate(points[0])
    rows = []
    for idx, pt in enumerate(points):
        Al = A1 if idx == 0 else family.evaluate(pt)
        label = pt.label if isinstance(pt, ExpansionPoint) and pt.label else str(idx + 1)
        rows.append(DifferenceRow(
            label,
            frobenius_norm(eye - Al),
            0.0 if idx == 0 else frobenius_norm(A1 - Al),
        ))
    return rows


# ---------------------------------------------------------------------------
# persistence: directory of Matrix Market files + JSON manifest
# ---------------------------------------------------------------------------

def _values_to_json(values):
    return [[float(v.real), float(v.imag)] for v in np.atleast_1d(values)]


def _values_from_json(pairs):
    return np.array([complex(re, im) for re, im in pairs], dtype=np.complex128)


def save_family(family, directory, points=(), extra=None):
    """Persist a family (and optional points) as .mtx files plus manifest.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    term_files = []
    for j, T in enumerate(family.terms):
        name = "term_%02d.mtx" % j
        write_matrix_market(T, directory / name)
        term_files.append(name)
    manifest = {"dim": family.dim, "terms": term_files}
    if family.rhs is not None:
        write_dense_matrix_market(family.rhs, directory / "rhs.mtx")
        manifest["rhs"] = "rhs.mtx"
    if family.output is not None:
        write_dense_matrix_market(family.output, directory / "output.mtx")
        manifest["output"] = "output.mtx"
    manifest["points"] = [
        {"label": pt.label or str(i + 1), "values": _values_to_json(pt.values)}
        for i, pt in enumerate(points)
    ]
    if extra:
        manifest["extra"] = extra
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory / "manifest.json"


def load_family(directory):
    """Load a family directory written by :func:`save_family`.

    Returns (family, points).
    """
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    terms = [read_matrix_market(directory / name) for name in manifest["terms"]]
    rhs = (read_dense_matrix_market(directory / manifest["rhs"])
           if "rhs" in manifest else None)
    output = (read_dense_matrix_market(directory / manifest["output"])
              if "output" in manifest else None)
    family = AffineFamily(terms, rhs=rhs, output=output)
    points = [ExpansionPoint(_values_from_json(p["values"]), label=p.get("label", ""))
              for p in manifest.get("points", [])]
    return family, points

"""Generators for desk-scale instances of the benchmark problem families.

Three families:

* A micro-gyroscope analog: seven sparse terms (one constant stiffness
  plus six parameter-weighted mass/damping/stiffness terms) in the
  slowly varying regime where preconditioner reuse pays off. The true
  industrial gyroscope data is not published, so this generator
  preserves its structure, the eleven-coefficient parameter map, and the
  inter-point variation scale rather than its exact numbers.

* A rotating-block example: A(s, p) = s I - blkdiag(A1(p), A2, A3, A4)
  with A1(p) = [[-1, p], [-p, -1]], the 2x2 rotations at +/-200 and
  +/-400, and a diagonal tail. Changing p moves exactly two off-diagonal
  entries, the sharpest possible test of difference-structure handling.

* A heat-model Kronecker family for Lyapunov right-hand sides:
  A(p) = E (x) Ab(p) + Ab(p) (x) E at dimension n^2, with
  Ab(p) = p1 A1 + p2 A2 + p3 A3 + p4 A4 + A5 built from 1-D
  finite-difference Laplacian pieces (boundary terms and a split
  interior absorption) so that Ab stays stable for positive parameters.
  The sign convention is fixed by the column-stacking identity
  vec(Ab Z E^T + E Z Ab^T) = (E (x) Ab + Ab (x) E) vec(Z), so solving
  A(p) z = vec(BB^T) and reshaping z solves the Lyapunov equation.
"""

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .affine import AffineFamily, ExpansionPoint, RawGyroParams, gyro_point_active
from .rpmor import SecondOrderModel
from .sparsecore import as_block, as_csr, identity_csr, kron, vec


# ---------------------------------------------------------------------------
# gyroscope analog
# ---------------------------------------------------------------------------

def standard_gyro_raw_points():
    """The four benchmark parameter tuples (frequency, rotation speed,
    geometry scaling), expressed through the raw quantities so the
    coefficient-map identities hold exactly."""
    s_lo = 2.0 * math.pi * math.sqrt(0.065) * 1j
    s_hi = 2.0 * math.pi * 0.15 * 1j
    th_lo = 2.5e-7 / math.sqrt(0.065)
    th_hi = 1.0e-6
    return (
        RawGyroParams(s=s_lo, theta=th_lo, d=1.0),
        RawGyroParams(s=s_lo, theta=th_lo, d=2.0),
        RawGyroParams(s=s_hi, theta=th_hi, d=2.0),
        RawGyroParams(s=s_hi, theta=th_hi, d=1.5),
    )


@dataclass
class GyroAnalogSpec:
    """Desk-scale gyroscope analog.

    ``stiffness_density``/``damping_density`` are average degrees of the
    random graphs behind the stiffness and damping patterns. The scale
    fields set the Frobenius magnitude of the parameter-weighted terms
    relative to the dominant constant stiffness; defaults keep the
    system firmly in the slow-variation regime. When ``n_points`` is not
    4 the raw parameters are sampled linearly inside the given ranges
    instead of using the four standard tuples.
    """

    n: int = 2000
    seed: int = 7
    stiffness_density: float = 3.0
    damping_density: float = 1.5
    freq_sq_range: tuple = (0.0225, 0.065)     # s = 2*pi*sqrt(q)*1j
    theta_range: tuple = (2.5e-7 / math.sqrt(0.065), 1.0e-6)
    d_range: tuple = (1.0, 2.0)
    n_points: int = 4
    mass_scale: float = 5e-6
    damping_scale: float = 1e-2
    stiffness_scale: float = 5e-6

    def __post_init__(self):
        if self.n < 10:
            raise ValueError("analog dimension must be at least 10")
        if self.n_points < 1:
            raise ValueError("need at least one point")

    def raw_points(self):
        if self.n_points == 4:
            return standard_gyro_raw_points()
        qs = np.linspace(*self.freq_sq_range, self.n_points)
        ths = np.linspace(*self.theta_range, self.n_points)
        ds = np.linspace(*self.d_range, self.n_points)
        return tuple(RawGyroParams(s=2.0 * math.pi * math.sqrt(q) * 1j, theta=th, d=d)
                     for q, th, d in zip(qs, ths, ds))


def _undirected_edges(n, avg_degree, rng):
    target = max(int(avg_degree * n / 2), 1)
    raw = rng.integers(0, n, size=(3 * target, 2))
    raw = raw[raw[:, 0] != raw[:, 1]]
    lo = np.minimum(raw[:, 0], raw[:, 1])
    hi = np.maximum(raw[:, 0], raw[:, 1])
    edges = np.unique(np.column_stack([lo, hi]), axis=0)
    return edges[:target]


def _graph_laplacian(n, avg_degree, rng, shift=1.0):
    """Shifted weighted graph Laplacian: symmetric positive definite."""
    edges = _undirected_edges(n, avg_degree, rng)
    w = rng.uniform(0.5, 1.5, size=edges.shape[0])
    i, j = edges[:, 0], edges[:, 1]
    W = sp.coo_matrix((np.concatenate([w, w]),
                       (np.concatenate([i, j]), np.concatenate([j, i]))),
                      shape=(n, n)).tocsr()
    deg = np.asarray(W.sum(axis=1)).ravel()
    return as_csr(sp.diags(deg + shift) - W)


def _mass_like(n, rng, coupling_degree=1.0):
    """Diagonally dominant mass-like matrix."""
    edges = _undirected_edges(n, coupling_degree, rng)
    w = rng.uniform(0.0, 0.2, size=edges.shape[0])
    i, j = edges[:, 0], edges[:, 1]
    off = sp.coo_matrix((np.concatenate([w, w]),
                         (np.concatenate([i, j]), np.concatenate([j, i]))),
                        shape=(n, n))
    return as_csr(sp.diags(rng.uniform(1.0, 2.0, size=n)) + off)


def _gyroscopic(n, avg_degree, rng):
    """Skew-dominated coupling matrix (rotational damping structure)."""
    edges = _undirected_edges(n, avg_degree, rng)
    w = rng.uniform(0.5, 1.5, size=edges.shape[0])
    i, j = edges[:, 0], edges[:, 1]
    S = sp.coo_matrix((w, (i, j)), shape=(n, n)).tocsr()
    sym = rng.uniform(0.0, 0.1, size=edges.shape[0])
    Dsym = sp.coo_matrix((np.concatenate([sym, sym]),
                          (np.concatenate([i, j]), np.concatenate([j, i]))),
                         shape=(n, n))
    return as_csr((S - S.T) + Dsym)


def _nonsingular_at(A):
    try:
        spla.splu(A.tocsc())
    except RuntimeError:
        return False
    return True


def gen_gyro_analog(spec=None):
    """Generate the gyroscope analog and its suggested expansion points.

    Seven terms: constant stiffness K1 plus parameter-weighted M1, M2,
    D1, D2, K2, K3 with active coefficients (s^2, s^2 d, s th, s th d,
    1/d, d). Regenerates with a bumped seed if any suggested point gives
    a singular system (five attempts).

    Returns (SecondOrderModel backed by the 7-term family, points).
    """
    spec = spec or GyroAnalogSpec()
    raws = spec.raw_points()
    points = [gyro_point_active(raw, label="point-%d" % (i + 1))
              for i, raw in enumerate(raws)]
    last_err = None
    for attempt in range(5):
        rng = np.random.default_rng(spec.seed + attempt)
        n = spec.n
        K1 = _graph_laplacian(n, spec.stiffness_density, rng, shift=1.0)
        M1 = spec.mass_scale * _mass_like(n, rng)
        M2 = spec.mass_scale * _mass_like(n, rng)
        D1 = spec.damping_scale * _gyroscopic(n, spec.damping_density, rng)
        D2 = spec.damping_scale * _gyroscopic(n, spec.damping_density, rng)
        K2 = spec.stiffness_scale * _graph_laplacian(n, spec.stiffness_density, rng, shift=1.0)
        K3 = spec.stiffness_scale * _graph_laplacian(n, spec.stiffness_density, rng, shift=1.0)
        rhs = rng.uniform(-1.0, 1.0, size=(n, 1))
        output = rng.uniform(-1.0, 1.0, size=(n, 1))
        family = AffineFamily([K1, M1, M2, D1, D2, K2, K3], rhs=rhs, output=output)
        if all(_nonsingular_at(family.evaluate(pt)) for pt in points):
            return SecondOrderModel.from_affine(family), points
        last_err = "singular system at a suggested point (seed %d)" % (spec.seed + attempt)
    raise RuntimeError("could not generate a nonsingular analog in 5 attempts: %s"
                       % last_err)


# ---------------------------------------------------------------------------
# rotating-block example
# ---------------------------------------------------------------------------

@dataclass
class PenzlSpec:
    """Parameters of the rotating-block family.

    ``params`` is the list of rotation parameters p_j for the first
    block; ``tail_dim`` sizes the diagonal tail diag(1..tail_dim).
    """

    params: tuple = (10.0, 12.0, 14.0, 16.0)
    tail_dim: int = 1000

    def __post_init__(self):
        if len(self.params) < 1:
            raise ValueError("need at least one parameter value")
        if self.tail_dim < 1:
            raise ValueError("tail_dim must be positive")


def _rotation_block(speed):
    return np.array([[-1.0, speed], [-speed, -1.0]])


def gen_penzl(spec=None):
    """Rotating-block model with A(s, p) = s I - blkdiag(A1(p), A2, A3, A4).

    Encoded as a first-order model: D(p) = I, K(p) = K0 + p * K1 so that
    s D + K = s I - blkdiag(...). A(s, p_1) and A(s, p_j) differ in
    exactly the two off-diagonal entries of the first block.
    """
    spec = spec or PenzlSpec()
    n4 = spec.tail_dim
    n = 6 + n4
    base = sp.block_diag([
        _rotation_block(0.0),
        _rotation_block(200.0),
        _rotation_block(400.0),
        sp.diags(np.arange(1, n4 + 1, dtype=float)),
    ], format="csr")
    K0 = as_csr(-base)
    # parameter direction: the first block's rotation, embedded
    Kp = as_csr(sp.coo_matrix(
        ([-1.0, 1.0], ([0, 1], [1, 0])), shape=(n, n)))
    b = np.ones((n, 1))
    b[:6] = 10.0
    model = SecondOrderModel.from_mdk(
        mass_terms=None,
        damping_terms=[identity_csr(n)],
        stiffness_terms=[K0, Kp],
        rhs=b,
        output=b.copy(),
    )
    return model


def penzl_affine_family(spec=None, s_values=(1j,)):
    """Affine view of the rotating-block model: terms [K0, I, Kp] with
    coefficients (s, p), plus the (s, p_j) grid points.

    This is the persistence form: three terms, rhs and output.
    """
    spec = spec or PenzlSpec()
    model = gen_penzl(spec)
    K0, Kp = model.stiffness_terms
    n = K0.shape[0]
    family = AffineFamily([K0, identity_csr(n), Kp],
                          rhs=model.rhs, output=model.output)
    points = []
    for k, s in enumerate(s_values):
        for j, p in enumerate(spec.params):
            points.append(ExpansionPoint(
                np.array([s, p], dtype=np.complex128),
                label="s%d-p%d" % (k + 1, j + 1)))
    return family, points


def pmor_l_sequence(model, s_grid, p_grid):
    """All (A(s_k, p_j), B) systems of a transfer-function sampling grid.

    Ordered with the frequency grid outermost: every parameter for s_1,
    then every parameter for s_2, and so on.
    """
    s_grid = list(s_grid)
    p_grid = list(p_grid)
    if not s_grid or not p_grid:
        raise ValueError("both grids must be nonempty")
    if model.rhs is None:
        raise ValueError("model has no right-hand side")
    systems = []
    for s in s_grid:
        for p in p_grid:
            systems.append((model.assemble(s, np.atleast_1d(p)), model.rhs))
    return systems


# ---------------------------------------------------------------------------
# heat-model Kronecker family
# ---------------------------------------------------------------------------

_MAX_BASE_DIM = 1000  # Kronecker system dimension is the square of this


@dataclass
class HeatKronSpec:
    """Heat-model Lyapunov family at base dimension ``base_dim``.

    ``params`` lists the 4-component parameter vectors. Base pieces can
    be overridden; by default they are 1-D finite-difference Laplacian
    splits: two boundary terms, two halves of an interior absorption
    term, and the constant interior Laplacian.
    """

    base_dim: int = 6
    params: tuple = ((1.0, 1.0, 1.0, 1.0),
                     (1.1, 0.9, 1.05, 0.95),
                     (0.9, 1.1, 0.95, 1.05))
    e_factor: object = None
    base_terms: object = None

    def __post_init__(self):
        if self.base_dim < 2:
            raise ValueError("base_dim must be at least 2")
        if self.base_dim > _MAX_BASE_DIM:
            raise OverflowError("Kronecker system dimension %d^2 exceeds desk scale"
                                % self.base_dim)
        for p in self.params:
            if len(p) != 4:
                raise ValueError("each parameter vector must have 4 components")


@dataclass
class HeatKronModel:
    family: AffineFamily          # 4 parameters, dimension base^2
    e_factor: object              # E
    base_terms: list              # [A1, A2, A3, A4, A5]
    rhs_factor: np.ndarray        # B of the Lyapunov right-hand side BB^T
    points: list = field(default_factory=list)

    @property
    def base_dim(self):
        return self.e_factor.shape[0]

    def base_operator(self, pvals):
        """Ab(p) = p1 A1 + p2 A2 + p3 A3 + p4 A4 + A5 on the base grid."""
        pvals = np.atleast_1d(np.asarray(pvals, dtype=np.complex128))
        acc = self.base_terms[4].copy().astype(np.complex128)
        for i in range(4):
            acc = acc + pvals[i] * self.base_terms[i]
        return as_csr(acc)

    def difference_term(self, p_from, p_to):
        """(EA) difference built per the closed formula:
        E (x) dAb + dAb (x) E with dAb = sum_i (p_to_i - p_from_i) A_i."""
        p_from = np.atleast_1d(np.asarray(p_from, dtype=np.complex128))
        p_to = np.atleast_1d(np.asarray(p_to, dtype=np.complex128))
        delta = None
        for i in range(4):
            piece = (p_to[i] - p_from[i]) * self.base_terms[i]
            delta = piece if delta is None else delta + piece
        delta = as_csr(delta)
        return as_csr(kron(self.e_factor, delta) + kron(delta, self.e_factor))

    def lyapunov_rhs(self):
        BBt = self.rhs_factor @ self.rhs_factor.conj().T
        return vec(BBt)[:, None]


def _default_heat_pieces(n):
    h = 1.0 / (n + 1)
    main = sp.diags([np.ones(n - 1), -2.0 * np.ones(n), np.ones(n - 1)],
                    offsets=(-1, 0, 1)) / (h * h)
    A5 = as_csr(main)
    A1 = as_csr(sp.coo_matrix(([-1.0 / h], ([0], [0])), shape=(n, n)))
    A2 = as_csr(sp.coo_matrix(([-1.0 / h], ([n - 1], [n - 1])), shape=(n, n)))
    half = n // 2
    w = np.zeros(n)
    w[:half] = -1.0
    A3 = as_csr(sp.diags(w))
    w2 = np.zeros(n)
    w2[half:] = -1.0
    A4 = as_csr(sp.diags(w2))
    return [A1, A2, A3, A4, A5]


def gen_heat_kron(spec=None):
    """Build the Kronecker-lifted heat family A(p) = E (x) Ab(p) + Ab(p) (x) E.

    Returns a :class:`HeatKronModel`; its ``family`` is an affine family
    in the four parameters at dimension base_dim^2 whose rhs is
    vec(BB^T).
    """
    spec = spec or HeatKronSpec()
    n = spec.base_dim
    E = as_csr(spec.e_factor) if spec.e_factor is not None else identity_csr(n)
    terms = ([as_csr(T) for T in spec.base_terms]
             if spec.base_terms is not None else _default_heat_pieces(n))
    if len(terms) != 5:
        raise ValueError("expected five base terms [A1..A4, A5]")
    B = np.ones((n, 1)) / math.sqrt(n)
    lifted0 = as_csr(kron(E, terms[4]) + kron(terms[4], E))
    lifted = [as_csr(kron(E, T) + kron(T, E)) for T in terms[:4]]
    BBt = B @ B.conj().T
    family = AffineFamily([lifted0] + lifted, rhs=vec(BBt)[:, None])
    points = [ExpansionPoint(np.asarray(p, dtype=np.complex128),
                             label="p-%d" % (i + 1))
              for i, p in enumerate(spec.params)]
    return HeatKronModel(family=family, e_factor=E, base_terms=terms,
                         rhs_factor=as_block(B), points=points)


def pbtmr_sequence(model, points=None):
    """Ordered Lyapunov systems (A(p_j), vec(BB^T)) sharing one pattern."""
    pts = list(points) if points is not None else list(model.points)
    if not pts:
        raise ValueError("need at least one parameter point")
    b = model.lyapunov_rhs()
    return [(model.family.evaluate(pt), b) for pt in pts]

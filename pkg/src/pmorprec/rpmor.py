"""Moment-matching reduction driver for parametric second-order systems.

For each expansion point the pipeline solves one single-right-hand-side
system for the zeroth moment, then one block system per parent column
for every further moment level (the level-1 rhs columns are available
together, so they go to the solver as one block). Moment columns are
orthogonalized incrementally against the accumulated basis; the reduced
model is the conjugate-transpose congruence of every family term with
that basis.

Preconditioning across the point sequence follows a policy: none, a
fresh sparse approximate inverse per point, or a cheap update referenced
to the initial or previous system.
"""

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .affine import AffineFamily, ExpansionPoint, _point_values
from .krylov import SolverConfig, block_gcro_solve
from .sparsecore import (
    as_block,
    as_csr,
    dense_lu_solve,
    extend_orthonormal_basis,
    read_dense_matrix_market,
    write_dense_matrix_market,
)
from .spai import SpaiConfig, spai_build
from .update import UpdateConfig, update_first, update_second


class ConvergenceError(RuntimeError):
    """A pipeline linear solve failed to reach its tolerance."""


def _eval_terms(terms, pvals):
    """terms[0] + sum_i pvals[i] * terms[i+1]; None means zero."""
    if terms is None:
        return None
    acc = terms[0].copy()
    for i, c in enumerate(pvals[:len(terms) - 1]):
        if c != 0:
            acc = acc + c * terms[i + 1]
    return as_csr(acc)


@dataclass
class SecondOrderModel:
    """Second-order system, either already in affine form or as
    mass/damping/stiffness term lists affine in the parameters.

    Term lists read [T0, T1, ..., Tw] for T(p) = T0 + sum p_i T_i.
    """

    family: AffineFamily = None
    mass_terms: list = None
    damping_terms: list = None
    stiffness_terms: list = None
    rhs: np.ndarray = None
    output: np.ndarray = None

    @classmethod
    def from_affine(cls, family):
        return cls(family=family, rhs=family.rhs, output=family.output)

    @classmethod
    def from_mdk(cls, mass_terms, damping_terms, stiffness_terms, rhs=None, output=None):
        def clean(ts):
            return None if ts is None else [as_csr(T) for T in ts]
        m = cls(mass_terms=clean(mass_terms), damping_terms=clean(damping_terms),
                stiffness_terms=clean(stiffness_terms),
                rhs=as_block(rhs) if rhs is not None else None,
                output=as_block(output) if output is not None else None)
        if m.mass_terms is None and m.damping_terms is None and m.stiffness_terms is None:
            raise ValueError("need at least one of mass/damping/stiffness terms")
        return m

    @property
    def dim(self):
        if self.family is not None:
            return self.family.dim
        for ts in (self.stiffness_terms, self.damping_terms, self.mass_terms):
            if ts is not None:
                return ts[0].shape[0]
        raise ValueError("empty model")

    def assemble(self, s, pvals):
        """s^2 M(p) + s D(p) + K(p) as canonical CSR."""
        if self.family is not None:
            raise ValueError("affine-form models are evaluated at expansion points; "
                             "use family.evaluate")
        pvals = np.atleast_1d(np.asarray(pvals, dtype=np.complex128))
        s = complex(s)
        acc = None
        for coef, terms in ((s * s, self.mass_terms), (s, self.damping_terms),
                            (1.0, self.stiffness_terms)):
            part = _eval_terms(terms, pvals)
            if part is None:
                continue
            part = coef * part
            acc = part if acc is None else acc + part
        return as_csr(acc)


@dataclass
class ReducedModel:
    """Dense reduced system: congruence of every affine term with the basis.

    ``output`` is the reduced output map (d_O x r); a transfer-function
    query solves the r x r reduced system directly.
    """

    terms: list
    rhs: np.ndarray
    output: np.ndarray
    basis: np.ndarray

    @property
    def order(self):
        return self.terms[0].shape[0]

    def evaluate(self, point):
        coeffs = _point_values(point)
        if coeffs.shape[0] != len(self.terms) - 1:
            raise ValueError("point has %d components, reduced family has %d parameters"
                             % (coeffs.shape[0], len(self.terms) - 1))
        A = self.terms[0].copy()
        for j, c in enumerate(coeffs):
            A += c * self.terms[j + 1]
        return A

    def transfer(self, point):
        return self.output @ np.linalg.solve(self.evaluate(point), self.rhs)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = []
        for j, T in enumerate(self.terms):
            name = "reduced_term_%02d.mtx" % j
            write_dense_matrix_market(T, directory / name)
            files.append(name)
        write_dense_matrix_market(self.rhs, directory / "reduced_rhs.mtx")
        write_dense_matrix_market(self.output, directory / "reduced_output.mtx")
        write_dense_matrix_market(self.basis, directory / "basis.mtx")
        with open(directory / "reduced.json", "w") as fh:
            json.dump({"terms": files, "rhs": "reduced_rhs.mtx",
                       "output": "reduced_output.mtx", "basis": "basis.mtx",
                       "order": self.order}, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        with open(directory / "reduced.json") as fh:
            manifest = json.load(fh)
        terms = [np.asarray(read_dense_matrix_market(directory / f))
                 for f in manifest["terms"]]
        return cls(terms=terms,
                   rhs=read_dense_matrix_market(directory / manifest["rhs"]),
                   output=read_dense_matrix_market(directory / manifest["output"]),
                   basis=read_dense_matrix_market(directory / manifest["basis"]))


# ---------------------------------------------------------------------------
# preconditioner policy across the point sequence
# ---------------------------------------------------------------------------

PRECOND_KINDS = ("none", "spai", "spai-update-first", "spai-update-second")


@dataclass
class PrecondPolicy:
    kind: str = "none"
    spai: SpaiConfig = field(default_factory=SpaiConfig)
    update: UpdateConfig = field(default_factory=UpdateConfig)
    threads: int = 1

    def __post_init__(self):
        if self.kind not in PRECOND_KINDS:
            raise ValueError("unknown preconditioner kind %r" % self.kind)


class SequencePreconditioner:
    """Stateful producer of per-system preconditioners under a policy."""

    def __init__(self, policy=None):
        self.policy = policy or PrecondPolicy()
        self._initial_system = None
        self._initial_pre = None
        self._prev_system = None
        self._prev_pre = None

    def for_system(self, A):
        """Returns (preconditioner-or-None, build_seconds, kind_label, stats)."""
        pol = self.policy
        if pol.kind == "none":
            return None, 0.0, "none", None
        t0 = time.perf_counter()
        if pol.kind == "spai" or self._initial_pre is None:
            P, stats = spai_build(A, pol.spai, threads=pol.threads)
            label = "spai"
        elif pol.kind == "spai-update-first":
            P, stats = update_first(self._initial_system, A, self._initial_pre, pol.update)
            label = "update-first"
        else:
            P, stats = update_second(self._prev_system, A, self._prev_pre, pol.update)
            label = "update-second"
        seconds = time.perf_counter() - t0
        if self._initial_pre is None:
            self._initial_system, self._initial_pre = A, P
        self._prev_system, self._prev_pre = A, P
        return P, seconds, label, stats


# ---------------------------------------------------------------------------
# moment solves
# ---------------------------------------------------------------------------

@dataclass
class SolveRecord:
    point_index: int
    point_label: str
    level: int
    call_index: int
    n_rhs: int
    iterations: int
    matvec_count: int
    precond_apply_count: int
    converged: bool
    solve_seconds: float
    final_residuals: list


def _checked_solve(A, rhs, precond, solver_cfg, point_index, point_label, level,
                   call_index, records):
    t0 = time.perf_counter()
    Xh, rep = block_gcro_solve(A, rhs, P=precond, cfg=solver_cfg)
    seconds = time.perf_counter() - t0
    finals = np.atleast_1d(np.asarray(rep.final_residuals, dtype=float))
    records.append(SolveRecord(
        point_index=point_index, point_label=point_label, level=level,
        call_index=call_index, n_rhs=rhs.shape[1], iterations=rep.iterations,
        matvec_count=rep.matvec_count, precond_apply_count=rep.precond_apply_count,
        converged=rep.converged, solve_seconds=seconds,
        final_residuals=[float(v) for v in finals]))
    if not rep.converged:
        raise ConvergenceError(
            "solver did not converge at point %r (index %d), moment level %d, call %d"
            % (point_label, point_index, level, call_index))
    return Xh


def zeroth_moment(family, point, solver_cfg=None, precond=None):
    """Solve A(point) x0 = B. Returns (x0 block, SolveReport)."""
    if family.rhs is None:
        raise ValueError("family has no right-hand side block")
    A = family.evaluate(point)
    X0, rep = block_gcro_solve(A, family.rhs, P=precond, cfg=solver_cfg)
    if not rep.converged:
        label = point.label if isinstance(point, ExpansionPoint) else ""
        raise ConvergenceError("zeroth moment solve failed at point %r" % label)
    return X0, rep


def first_moment_rhs(family, x0):
    """Stacked right-hand sides [A_1 x0, ..., A_m x0], one block."""
    x0 = as_block(x0)
    return np.hstack([T @ x0 for T in family.terms[1:]])


def first_moments(family, point, x0, solver_cfg=None, precond=None):
    """All first-moment directions at one point via a single block solve."""
    A = family.evaluate(point)
    rhs = first_moment_rhs(family, x0)
    X1, rep = block_gcro_solve(A, rhs, P=precond, cfg=solver_cfg)
    if not rep.converged:
        label = point.label if isinstance(point, ExpansionPoint) else ""
        raise ConvergenceError("first moment block solve failed at point %r" % label)
    return X1, rep


@dataclass
class PipelineStep:
    point_index: int
    point_label: str
    precond_kind: str
    build_seconds: float
    build_stats: object


@dataclass
class PipelineReport:
    records: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    basis_size: int = 0

    def total_iterations(self):
        return sum(r.iterations for r in self.records)


def rpmor_reduce(family, points, levels=1, solver_cfg=None, policy=None,
                 drop_tol=1e-10):
    """Reduce an affine family by multi-point moment matching.

    Per point: one single solve for the zeroth moment, then for each
    level one block solve per parent column with the parameter-direction
    right-hand sides stacked together. Returns (ReducedModel,
    PipelineReport).
    """
    if not points:
        raise ValueError("need at least one expansion point")
    if levels < 0:
        raise ValueError("levels must be nonnegative")
    if family.rhs is None or family.output is None:
        raise ValueError("reduction needs both rhs and output on the family")
    solver_cfg = solver_cfg or SolverConfig()
    seq = SequencePreconditioner(policy)
    report = PipelineReport()
    V = None

    for idx, pt in enumerate(points):
        label = pt.label if isinstance(pt, ExpansionPoint) and pt.label else str(idx + 1)
        A = family.evaluate(pt)
        P, build_s, kind_label, stats = seq.for_system(A)
        report.steps.append(PipelineStep(idx, label, kind_label, build_s, stats))

        X0 = _checked_solve(A, family.rhs, P, solver_cfg, idx, label,
                            level=0, call_index=0, records=report.records)
        V = extend_orthonormal_basis(V, X0, tol_drop=drop_tol)
        parents = X0
        call = 1
        for level in range(1, levels + 1):
            blocks = []
            for c in range(parents.shape[1]):
                rhs = first_moment_rhs(family, parents[:, [c]])
                Xh = _checked_solve(A, rhs, P, solver_cfg, idx, label,
                                    level=level, call_index=call,
                                    records=report.records)
                V = extend_orthonormal_basis(V, Xh, tol_drop=drop_tol)
                blocks.append(Xh)
                call += 1
            parents = np.hstack(blocks)

    if V is None or V.shape[1] == 0:
        raise ValueError("every moment column was dropped; no basis to project on")
    report.basis_size = V.shape[1]

    Vh = V.conj().T
    reduced_terms = [np.asarray((Vh @ (T @ V))) for T in family.terms]
    reduced = ReducedModel(
        terms=reduced_terms,
        rhs=Vh @ family.rhs,
        output=family.output.T @ V,
        basis=V,
    )
    return reduced, report


# ---------------------------------------------------------------------------
# transfer functions
# ---------------------------------------------------------------------------

def transfer_function(model, point=None, s=None, p=None):
    """H = C^T A^{-1} B evaluated via a linear solve, never an inverse.

    Accepts an AffineFamily or affine-form SecondOrderModel at an
    expansion point, a ReducedModel at an expansion point, or an
    MDK-form SecondOrderModel at frequency ``s`` and parameters ``p``.
    Full models are solved densely (oracle scale).
    """
    if isinstance(model, ReducedModel):
        return model.transfer(point)
    if isinstance(model, SecondOrderModel):
        if model.family is not None:
            fam = model.family
            A = fam.evaluate(point)
            rhs = model.rhs if model.rhs is not None else fam.rhs
            out = model.output if model.output is not None else fam.output
        else:
            if s is None or p is None:
                raise ValueError("MDK-form models need s and p")
            A = model.assemble(s, p)
            rhs, out = model.rhs, model.output
    elif isinstance(model, AffineFamily):
        A = model.evaluate(point)
        rhs, out = model.rhs, model.output
    else:
        raise TypeError("unsupported model type %r" % type(model).__name__)
    if rhs is None or out is None:
        raise ValueError("model is missing rhs or output map")
    x = dense_lu_solve(A.toarray(), rhs)
    return out.T @ x

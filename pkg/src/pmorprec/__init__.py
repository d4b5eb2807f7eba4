"""Preconditioned block Krylov solves for sequences of slowly varying
sparse linear systems, with generators and a benchmark CLI."""

from .affine import (
    AffineFamily,
    ExpansionPoint,
    RawGyroParams,
    evaluate,
    gyro_point,
    gyro_point_active,
    load_family,
    pairwise_difference_norms,
    save_family,
)
from .krylov import (
    SolveReport,
    SolverBreakdown,
    SolverConfig,
    apply_preconditioner,
    block_gcro_solve,
    gcro_solve,
)
from .rpmor import (
    ConvergenceError,
    PrecondPolicy,
    ReducedModel,
    SecondOrderModel,
    first_moments,
    rpmor_reduce,
    transfer_function,
    zeroth_moment,
)
from .sparsecore import (
    SingularMatrixError,
    SparsityPattern,
    as_block,
    as_csr,
    dense_lu_solve,
    frobenius_norm,
    full_pattern,
    kron,
    mgs_orthonormalize,
    read_matrix_market,
    spmm,
    spmv,
    vec,
    unvec,
    write_matrix_market,
)
from .spai import (
    BuildStats,
    Preconditioner,
    SpaiConfig,
    quality,
    spai_build,
    spai_column,
    spai_pattern,
)
from .update import (
    UpdateConfig,
    sequence_precondition,
    update_first,
    update_second,
)

__version__ = "0.1.0"

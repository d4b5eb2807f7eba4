"""Cheap preconditioner updates across slowly varying systems.

Given a good initial approximate inverse P1 for A1, a later system Al
gets its preconditioner as a factored product P_l = Q_l * P1, where Q_l
solves min ||A1 - Al Q||_F columnwise over a sparse pattern. Because A1
and Al are close, these least-squares problems are far easier than a
fresh min ||I - Al P||_F: the target is nearly reachable and the
residual threshold rarely triggers pattern augmentation, so the column
subproblems stay small.

Two strategies:
  "first"  - every Q_l is referenced to the initial system, P_l = Q_l P1.
  "second" - each Q_i is referenced to the previous system,
             P_i = Q_i P_{i-1}; the factored chain deepens per step.

Both coincide at the second system and diverge from the third onward.
The "first" strategy is the default: the factored product stays depth 2
and composes with the most accurate factor available.
"""

import time
from dataclasses import dataclass

import numpy as np

from .sparsecore import as_csr
from .spai import (
    Preconditioner,
    SpaiConfig,
    spai_build,
    spai_pattern,
    _run_column_solves,
)


@dataclass
class UpdateConfig:
    """Knobs of the update solve; thresholds mirror :class:`SpaiConfig`.

    pattern_source : where the factor's pattern comes from.
        "system"    - pattern of the current system matrix union diagonal
                      (default).
        "reference" - pattern of the reference (target) matrix union
                      diagonal.
    """

    approach: str = "first"
    pattern_source: str = "system"
    ep: float = 1e-4
    pattern_level: int = 1
    max_fill_per_column: int = 80

    def __post_init__(self):
        if self.approach not in ("first", "second"):
            raise ValueError("approach must be 'first' or 'second'")
        if self.pattern_source not in ("system", "reference"):
            raise ValueError("pattern_source must be 'system' or 'reference'")
        if self.ep <= 0:
            raise ValueError("ep must be positive")

    def _spai_view(self):
        return SpaiConfig(ep=self.ep, pattern_level=self.pattern_level,
                          max_fill_per_column=self.max_fill_per_column)


def _solve_factor(reference, system, cfg):
    """Q = argmin ||reference - system * Q||_F over the configured pattern."""
    reference = as_csr(reference)
    system = as_csr(system)
    if reference.shape != system.shape or system.shape[0] != system.shape[1]:
        raise ValueError("reference and system matrices must be square and equal size")
    source = system if cfg.pattern_source == "system" else reference
    pattern = spai_pattern(source, level=0,
                           max_fill_per_column=cfg.max_fill_per_column)
    return _run_column_solves(system, reference, pattern, cfg._spai_view(), threads=1)


def update_first(A1, Al, P1, cfg=None):
    """Update referenced to the initial system: P_l = Q * P1.

    Q minimizes ||A1 - Al Q||_F columnwise; the result is returned as a
    factored preconditioner (never materialized). P1 must have been
    built against A1.
    """
    cfg = cfg or UpdateConfig()
    Q, stats = _solve_factor(A1, Al, cfg)
    return Preconditioner(q=Q, base=P1), stats


def update_second(A_prev, A_next, P_prev, cfg=None):
    """Update referenced to the previous system: P_i = Q * P_{i-1}.

    The factored chain deepens by one factor per call.
    """
    cfg = cfg or UpdateConfig(approach="second")
    Q, stats = _solve_factor(A_prev, A_next, cfg)
    return Preconditioner(q=Q, base=P_prev), stats


@dataclass
class SequenceStep:
    """Build record for one position in the sequence."""

    kind: str            # "initial" or "update"
    seconds: float
    stats: object


def sequence_precondition(family, points, cfg=None, spai_cfg=None, threads=1):
    """Preconditioners for a whole expansion-point sequence.

    The first point gets a fresh sparse approximate inverse; every later
    point gets the configured cheap update. Returns
    (list of Preconditioner, list of SequenceStep).
    """
    if not points:
        raise ValueError("need at least one expansion point")
    cfg = cfg or UpdateConfig()
    spai_cfg = spai_cfg or SpaiConfig(ep=cfg.ep, pattern_level=cfg.pattern_level,
                                      max_fill_per_column=cfg.max_fill_per_column)
    t0 = time.perf_counter()
    A1 = family.evaluate(points[0])
    P1, stats1 = spai_build(A1, spai_cfg, threads=threads)
    precs = [P1]
    steps = [SequenceStep("initial", time.perf_counter() - t0, stats1)]
    A_prev, P_prev = A1, P1
    for pt in points[1:]:
        t0 = time.perf_counter()
        Al = family.evaluate(pt)
        if cfg.approach == "first":
            P, stats = update_first(A1, Al, P1, cfg)
        else:
            P, stats = update_second(A_prev, Al, P_prev, cfg)
        precs.append(P)
        steps.append(SequenceStep("update", time.perf_counter() - t0, stats))
        A_prev, P_prev = Al, P
    return precs, steps

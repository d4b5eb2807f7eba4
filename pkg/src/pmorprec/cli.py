"""Benchmark command line: generate families, analyze variation, run
preconditioned solve sequences, compare runs.

Subcommands: gen, analyze, run, compare. Configuration is a single JSON
file per experiment; every report embeds the config hash and seed so
each number is reproducible. Exit codes: 0 success, 1 usage error,
2 numerical failure.
"""

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from .affine import ExpansionPoint, load_family, pairwise_difference_norms, save_family
from .krylov import SolverBreakdown, SolverConfig, block_gcro_solve, gcro_solve
from .rpmor import (
    ConvergenceError,
    PrecondPolicy,
    SequencePreconditioner,
    first_moment_rhs,
)
from .sparsecore import SingularMatrixError, frobenius_norm, identity_csr
from .spai import SpaiConfig, quality
from .update import UpdateConfig
from . import zoo

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2


class _Parser(argparse.ArgumentParser):
    # usage problems exit 1, not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit((EXIT_USAGE, "%s: error: %s" % (self.prog, message)))


def _config_hash(obj):
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _load_json(path):
    with open(path) as fh:
        return json.load(fh)


def _write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# model sources
# ---------------------------------------------------------------------------

def _build_generated(spec, seed_override=None):
    kind = spec.get("kind")
    params = {k: v for k, v in spec.items() if k != "kind"}
    if seed_override is not None and kind == "gyro-analog":
        params["seed"] = seed_override
    if kind == "gyro-analog":
        for key in ("freq_sq_range", "theta_range", "d_range"):
            if key in params:
                params[key] = tuple(params[key])
        model, points = zoo.gen_gyro_analog(zoo.GyroAnalogSpec(**params))
        return model.family, points
    if kind == "penzl":
        s_values = [complex(re, im) for re, im in params.pop("s_values", [[0.0, 1.0]])]
        if "params" in params:
            params["params"] = tuple(params["params"])
        return zoo.penzl_affine_family(zoo.PenzlSpec(**params), s_values=s_values)
    if kind == "heat-kron":
        if "params" in params:
            params["params"] = tuple(tuple(p) for p in params["params"])
        hk = zoo.gen_heat_kron(zoo.HeatKronSpec(**params))
        return hk.family, hk.points
    raise ValueError("unknown generator kind %r" % kind)


def _resolve_model(model_spec, seed_override=None):
    """Family + points from either a generator spec or a family directory."""
    if "family_dir" in model_spec:
        family, points = load_family(model_spec["family_dir"])
        if not points:
            raise ValueError("family directory has no expansion points")
        return family, points
    return _build_generated(model_spec, seed_override)


def _points_from_file(path):
    data = _load_json(path)
    return [ExpansionPoint(np.array([complex(re, im) for re, im in p["values"]]),
                           label=p.get("label", "")) for p in data]


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def cmd_gen(args):
    spec = _load_json(args.config)
    family, points = _build_generated(spec, seed_override=args.seed)
    out = Path(args.out)
    extra = {"kind": spec.get("kind"), "spec": spec,
             "config_hash": _config_hash(spec)}
    if args.seed is not None:
        extra["seed"] = args.seed
    save_family(family, out, points=points, extra=extra)
    print("wrote %d terms + manifest to %s" % (len(family.terms), out))
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def cmd_analyze(args):
    family, points = load_family(args.family)
    if args.points:
        points = _points_from_file(args.points)
    if not points:
        raise ValueError("no expansion points available for analysis")
    rows = pairwise_difference_norms(family, points)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "analysis.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "norm_identity_minus", "norm_first_minus"])
        for r in rows:
            w.writerow([r.label, repr(r.norm_identity_minus), repr(r.norm_first_minus)])
    _write_json({"rows": [{"label": r.label,
                           "norm_identity_minus": r.norm_identity_minus,
                           "norm_first_minus": r.norm_first_minus} for r in rows]},
                out / "analysis.json")
    for r in rows:
        print("%-12s  ||I-A||_F = %.6e   ||A1-A||_F = %.6e"
              % (r.label, r.norm_identity_minus, r.norm_first_minus))
    return EXIT_OK


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

_CSV_FIELDS = [
    "step", "point_label", "level", "call_index", "n_rhs", "iterations",
    "matvec_count", "precond_apply_count", "converged", "solve_seconds",
    "final_residuals",
]


def _record_row(rec):
    row = dict(rec)
    row["converged"] = "1" if rec["converged"] else "0"
    row["solve_seconds"] = repr(rec["solve_seconds"])
    row["final_residuals"] = ";".join(repr(v) for v in rec["final_residuals"])
    return row


def load_records_csv(path):
    """Inverse of the report.csv writer; values round-trip exactly."""
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            records.append({
                "step": int(row["step"]),
                "point_label": row["point_label"],
                "level": int(row["level"]),
                "call_index": int(row["call_index"]),
                "n_rhs": int(row["n_rhs"]),
                "iterations": int(row["iterations"]),
                "matvec_count": int(row["matvec_count"]),
                "precond_apply_count": int(row["precond_apply_count"]),
                "converged": row["converged"] == "1",
                "solve_seconds": float(row["solve_seconds"]),
                "final_residuals": [float(v) for v in row["final_residuals"].split(";")
                                    if v != ""],
            })
    return records


def _solve_calls(A, rhs_blocks, precond, solver_kind, solver_cfg, step, label,
                 records, start_level):
    """Run one point's systems; returns the per-level solution blocks."""
    outputs = []
    call = 0 if start_level == 0 else 1
    for level, rhs in rhs_blocks:
        t0 = time.perf_counter()
        if solver_kind == "block-gcro":
            X, rep = block_gcro_solve(A, rhs, P=precond, cfg=solver_cfg)
            seconds = time.perf_counter() - t0
            finals = np.atleast_1d(np.asarray(rep.final_residuals, dtype=float))
            records.append({
                "step": step, "point_label": label, "level": level,
                "call_index": call, "n_rhs": rhs.shape[1],
                "iterations": rep.iterations, "matvec_count": rep.matvec_count,
                "precond_apply_count": rep.precond_apply_count,
                "converged": bool(rep.converged), "solve_seconds": seconds,
                "final_residuals": [float(v) for v in finals]})
            call += 1
        else:
            X = np.zeros_like(rhs)
            for c in range(rhs.shape[1]):
                t1 = time.perf_counter()
                x, rep = gcro_solve(A, rhs[:, c], P=precond, cfg=solver_cfg)
                records.append({
                    "step": step, "point_label": label, "level": level,
                    "call_index": call, "n_rhs": 1,
                    "iterations": rep.iterations, "matvec_count": rep.matvec_count,
                    "precond_apply_count": rep.precond_apply_count,
                    "converged": bool(rep.converged),
                    "solve_seconds": time.perf_counter() - t1,
                    "final_residuals": [float(rep.residual_history[-1])]})
                X[:, c] = x
                call += 1
        outputs.append((level, X))
    return outputs


def run_experiment(config, threads=1, seed_override=None):
    """Execute a full experiment; returns (report dict, exit code)."""
    family, points = _resolve_model(config["model"], seed_override)
    levels = int(config.get("levels", 1))
    solver_kind = config.get("solver", "block-gcro")
    if solver_kind not in ("gcro", "block-gcro"):
        raise ValueError("solver must be 'gcro' or 'block-gcro'")
    precond_kind = config.get("precond", "none")
    solver_cfg = SolverConfig(**config.get("solver_config", {}))
    policy = PrecondPolicy(
        kind=precond_kind,
        spai=SpaiConfig(**config.get("spai_config", {})),
        update=UpdateConfig(**config.get("update_config", {})),
        threads=threads,
    )
    seq = SequencePreconditioner(policy)
    eye = identity_csr(family.dim)

    records = []
    steps = []
    A1 = None
    for idx, pt in enumerate(points):
        label = pt.label or str(idx + 1)
        A = family.evaluate(pt)
        if A1 is None:
            A1 = A
        P, build_s, kind_label, stats = seq.for_system(A)
        step_info = {
            "step": idx, "point_label": label, "precond_kind": kind_label,
            "build_seconds": build_s,
            "norm_identity_minus": frobenius_norm(eye - A),
            "norm_first_minus": 0.0 if idx == 0 else frobenius_norm(A1 - A),
            "quality_norm": quality(A, P) if P is not None else None,
        }
        if stats is not None:
            step_info["build_stats"] = stats.summary()
        steps.append(step_info)

        blocks = [(0, family.rhs)]
        solved = _solve_calls(A, blocks, P, solver_kind, solver_cfg, idx, label,
                              records, start_level=0)
        parents = solved[0][1]
        for level in range(1, levels + 1):
            next_blocks = []
            for c in range(parents.shape[1]):
                rhs = first_moment_rhs(family, parents[:, [c]])
                got = _solve_calls(A, [(level, rhs)], P, solver_kind, solver_cfg,
                                   idx, label, records, start_level=level)
                next_blocks.append(got[0][1])
            parents = np.hstack(next_blocks)

    per_step = {}
    for rec in records:
        agg = per_step.setdefault(rec["step"], {"iterations": 0, "matvec_count": 0,
                                                "solve_seconds": 0.0, "calls": 0})
        agg["iterations"] += rec["iterations"]
        agg["matvec_count"] += rec["matvec_count"]
        agg["solve_seconds"] += rec["solve_seconds"]
        agg["calls"] += 1
    summary = {
        "total_iterations": sum(r["iterations"] for r in records),
        "total_matvecs": sum(r["matvec_count"] for r in records),
        "total_solve_seconds": sum(r["solve_seconds"] for r in records),
        "total_build_seconds": sum(s["build_seconds"] for s in steps),
        "total_calls": len(records),
        "all_converged": all(r["converged"] for r in records),
        "per_step": {str(k): v for k, v in sorted(per_step.items())},
    }
    fingerprint = _config_hash({
        "model": config["model"],
        "points": [[[v.real, v.imag] for v in pt.values] for pt in points],
    })
    report = {
        "config": config,
        "config_hash": _config_hash(config),
        "seed": seed_override if seed_override is not None
                else config.get("model", {}).get("seed"),
        "threads": threads,
        "family_fingerprint": fingerprint,
        "records": records,
        "steps": steps,
        "summary": summary,
    }
    code = EXIT_OK if summary["all_converged"] else EXIT_NUMERICAL
    return report, code, family, points


def _write_report(report, out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(report, out / "report.json")
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=_CSV_FIELDS)
        w.writeheader()
        for rec in report["records"]:
            w.writerow(_record_row(rec))
    lines = []
    lines.append("solver=%s  precond=%s  config=%s"
                 % (report["config"].get("solver", "block-gcro"),
                    report["config"].get("precond", "none"),
                    report["config_hash"][:12]))
    lines.append("%-6s %-12s %-10s %-12s %-12s %-12s"
                 % ("step", "point", "calls", "iterations", "build_s", "solve_s"))
    for info in report["steps"]:
        agg = report["summary"]["per_step"].get(str(info["step"]),
                                                {"iterations": 0, "calls": 0,
                                                 "solve_seconds": 0.0})
        lines.append("%-6d %-12s %-10d %-12d %-12.3f %-12.3f"
                     % (info["step"], info["point_label"], agg["calls"],
                        agg["iterations"], info["build_seconds"],
                        agg["solve_seconds"]))
    s = report["summary"]
    lines.append("sum    calls=%d iterations=%d build_s=%.3f solve_s=%.3f converged=%s"
                 % (s["total_calls"], s["total_iterations"], s["total_build_seconds"],
                    s["total_solve_seconds"], s["all_converged"]))
    with open(out / "summary.txt", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_run(args):
    config = _load_json(args.config)
    report, code, family, points = run_experiment(
        config, threads=args.threads, seed_override=args.seed)
    out = Path(args.out)
    _write_report(report, out)
    # persist the actual systems so every number in the report is
    # reproducible from disk
    save_family(family, out / "family", points=points,
                extra={"config_hash": report["config_hash"]})
    return code


# ---------------------------------------------------------------------------
# compare
# ---------------------------------------------------------------------------

def cmd_compare(args):
    rep_a = _load_json(Path(args.run_a) / "report.json")
    rep_b = _load_json(Path(args.run_b) / "report.json")
    if rep_a["family_fingerprint"] != rep_b["family_fingerprint"]:
        raise ValueError("runs cover different families/points; refusing to compare")

    def pct(a, b):
        return 0.0 if a == 0 else 100.0 * (a - b) / a

    steps = []
    per_a = rep_a["summary"]["per_step"]
    per_b = rep_b["summary"]["per_step"]
    builds_a = {str(s["step"]): s["build_seconds"] for s in rep_a["steps"]}
    builds_b = {str(s["step"]): s["build_seconds"] for s in rep_b["steps"]}
    for key in sorted(per_a, key=int):
        if key not in per_b:
            continue
        a, b = per_a[key], per_b[key]
        steps.append({
            "step": int(key),
            "iterations_a": a["iterations"], "iterations_b": b["iterations"],
            "iterations_saving_pct": pct(a["iterations"], b["iterations"]),
            "solve_seconds_a": a["solve_seconds"], "solve_seconds_b": b["solve_seconds"],
            "solve_seconds_saving_pct": pct(a["solve_seconds"], b["solve_seconds"]),
            "build_seconds_a": builds_a.get(key, 0.0),
            "build_seconds_b": builds_b.get(key, 0.0),
            "build_seconds_saving_pct": pct(builds_a.get(key, 0.0),
                                            builds_b.get(key, 0.0)),
        })
    sa, sb = rep_a["summary"], rep_b["summary"]
    totals = {
        "iterations_saving_pct": pct(sa["total_iterations"], sb["total_iterations"]),
        "solve_seconds_saving_pct": pct(sa["total_solve_seconds"],
                                        sb["total_solve_seconds"]),
        "build_seconds_saving_pct": pct(sa["total_build_seconds"],
                                        sb["total_build_seconds"]),
    }
    delta = {"run_a": str(args.run_a), "run_b": str(args.run_b),
             "steps": steps, "totals": totals}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(delta, out / "compare.json")
    for srow in steps:
        print("step %d: iterations %d -> %d (%.1f%%), solve %.3fs -> %.3fs (%.1f%%)"
              % (srow["step"], srow["iterations_a"], srow["iterations_b"],
                 srow["iterations_saving_pct"], srow["solve_seconds_a"],
                 srow["solve_seconds_b"], srow["solve_seconds_saving_pct"]))
    print("totals: iterations saving %.1f%%, solve saving %.1f%%, build saving %.1f%%"
          % (totals["iterations_saving_pct"], totals["solve_seconds_saving_pct"],
             totals["build_seconds_saving_pct"]))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = _Parser(prog="pmorprec",
                     description="preconditioned solves for parametric system sequences")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a family directory from a spec")
    p_gen.add_argument("--config", required=True, help="generator spec JSON")
    p_gen.add_argument("--out", required=True, help="output family directory")
    p_gen.add_argument("--seed", type=int, default=None)
    p_gen.set_defaults(func=cmd_gen)

    p_an = sub.add_parser("analyze", help="inter-point difference norms")
    p_an.add_argument("--family", required=True, help="family directory")
    p_an.add_argument("--points", default=None, help="points JSON (overrides manifest)")
    p_an.add_argument("--out", required=True, help="output directory")
    p_an.set_defaults(func=cmd_analyze)

    p_run = sub.add_parser("run", help="run a solve-sequence experiment")
    p_run.add_argument("--config", required=True, help="experiment config JSON")
    p_run.add_argument("--out", required=True, help="output directory")
    p_run.add_argument("--threads", type=int, default=1)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="delta report between two runs")
    p_cmp.add_argument("run_a")
    p_cmp.add_argument("run_b")
    p_cmp.add_argument("--out", default=None)
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if isinstance(exc.code, tuple):
            code, message = exc.code
            print(message, file=sys.stderr)
            return code
        return exc.code if exc.code is not None else EXIT_OK
    try:
        return args.func(args)
    except (ConvergenceError, SolverBreakdown, SingularMatrixError) as exc:
        print("numerical failure: %s" % exc, file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

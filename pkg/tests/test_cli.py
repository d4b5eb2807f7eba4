import csv
import json
from pathlib import Path

import numpy as np
import pytest

from pmorprec.affine import AffineFamily, ExpansionPoint, save_family
from pmorprec.cli import load_records_csv, main
from pmorprec.sparsecore import as_csr, identity_csr


def _write(path, obj):
    path.write_text(json.dumps(obj, indent=2))
    return str(path)


def _dir_bytes(root):
    out = {}
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


@pytest.fixture
def identity_family_dir(tmp_path):
    n = 24
    fam = AffineFamily([identity_csr(n), as_csr(np.zeros((n, n)))],
                       rhs=np.ones((n, 1)), output=np.ones((n, 1)))
    pts = [ExpansionPoint([0.0], label="only")]
    d = tmp_path / "idfam"
    save_family(fam, d, points=pts)
    return d


class TestGen:
    def test_penzl_writes_five_matrix_files(self, tmp_path):
        spec = _write(tmp_path / "spec.json",
                      {"kind": "penzl", "params": [10.0, 11.0], "tail_dim": 20})
        out = tmp_path / "fam"
        assert main(["gen", "--config", spec, "--out", str(out)]) == 0
        mtx = sorted(p.name for p in out.glob("*.mtx"))
        assert len(mtx) == 5          # three terms + rhs + output
        assert (out / "manifest.json").exists()

    def test_same_seed_byte_identical(self, tmp_path):
        spec = _write(tmp_path / "spec.json",
                      {"kind": "gyro-analog", "n": 60, "seed": 3})
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["gen", "--config", spec, "--out", str(a)]) == 0
        assert main(["gen", "--config", spec, "--out", str(b)]) == 0
        assert _dir_bytes(a) == _dir_bytes(b)

    def test_invalid_spec_exits_one(self, tmp_path, capsys):
        spec = _write(tmp_path / "spec.json", {"kind": "unknown-model"})
        code = main(["gen", "--config", spec, "--out", str(tmp_path / "x")])
        assert code == 1
        assert "error" in capsys.readouterr().err.lower()

    def test_missing_subcommand_usage_error(self, capsys):
        assert main([]) == 1

    def test_heat_kron_generates(self, tmp_path):
        spec = _write(tmp_path / "spec.json", {"kind": "heat-kron", "base_dim": 4})
        out = tmp_path / "hk"
        assert main(["gen", "--config", spec, "--out", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["terms"]) == 5
        assert len(manifest["points"]) == 3


class TestAnalyze:
    def test_single_point_second_column_zero(self, identity_family_dir, tmp_path):
        out = tmp_path / "an"
        assert main(["analyze", "--family", str(identity_family_dir),
                     "--out", str(out)]) == 0
        rows = json.loads((out / "analysis.json").read_text())["rows"]
        assert len(rows) == 1
        assert rows[0]["norm_first_minus"] == 0.0

    def test_identical_points_all_zero_differences(self, tmp_path):
        n = 10
        fam = AffineFamily([identity_csr(n), as_csr(np.zeros((n, n)))])
        pts = [ExpansionPoint([0.5], label="a"), ExpansionPoint([0.5], label="b")]
        d = tmp_path / "fam"
        save_family(fam, d, points=pts)
        out = tmp_path / "an"
        assert main(["analyze", "--family", str(d), "--out", str(out)]) == 0
        rows = json.loads((out / "analysis.json").read_text())["rows"]
        assert rows[1]["norm_first_minus"] == 0.0

    def test_gyro_ordering_of_columns(self, tmp_path):
        spec = _write(tmp_path / "spec.json", {"kind": "gyro-analog", "n": 80, "seed": 5})
        fam_dir = tmp_path / "fam"
        main(["gen", "--config", spec, "--out", str(fam_dir)])
        out = tmp_path / "an"
        assert main(["analyze", "--family", str(fam_dir), "--out", str(out)]) == 0
        rows = json.loads((out / "analysis.json").read_text())["rows"]
        for row in rows[1:]:
            assert row["norm_first_minus"] < row["norm_identity_minus"]

    def test_csv_matches_json(self, identity_family_dir, tmp_path):
        out = tmp_path / "an"
        main(["analyze", "--family", str(identity_family_dir), "--out", str(out)])
        with open(out / "analysis.csv") as fh:
            rows = list(csv.DictReader(fh))
        jrows = json.loads((out / "analysis.json").read_text())["rows"]
        assert len(rows) == len(jrows)
        for r, jr in zip(rows, jrows):
            assert float(r["norm_identity_minus"]) == jr["norm_identity_minus"]


class TestRun:
    def _run_config(self, tmp_path, family_dir, **overrides):
        config = {
            "model": {"family_dir": str(family_dir)},
            "levels": 1,
            "solver": "block-gcro",
            "precond": "none",
        }
        config.update(overrides)
        return _write(tmp_path / "run.json", config)

    def test_identity_family_single_iteration(self, identity_family_dir, tmp_path):
        cfg = self._run_config(tmp_path, identity_family_dir)
        out = tmp_path / "run"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        for rec in report["records"]:
            assert rec["iterations"] <= 1
            assert rec["converged"]
        assert (out / "report.csv").exists()
        assert (out / "summary.txt").exists()
        assert (out / "family" / "manifest.json").exists()

    def test_csv_roundtrip_exact(self, identity_family_dir, tmp_path):
        cfg = self._run_config(tmp_path, identity_family_dir)
        out = tmp_path / "run"
        main(["run", "--config", cfg, "--out", str(out)])
        report = json.loads((out / "report.json").read_text())
        records = load_records_csv(out / "report.csv")
        assert records == report["records"]

    def test_report_carries_hash_and_seed(self, tmp_path):
        spec = {"kind": "gyro-analog", "n": 60, "seed": 9}
        cfg = self._run_config(tmp_path, "unused", model=spec,
                               precond="spai")
        out = tmp_path / "run"
        assert main(["run", "--config", cfg, "--out", str(out), "--seed", "9"]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["seed"] == 9
        assert len(report["config_hash"]) == 64
        assert report["family_fingerprint"]

    def test_run_deterministic_across_invocations(self, tmp_path):
        spec = {"kind": "gyro-analog", "n": 60, "seed": 13}
        cfg = self._run_config(tmp_path, "unused", model=spec,
                               precond="spai-update-first")
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["run", "--config", cfg, "--out", str(out1), "--threads", "1"]) == 0
        assert main(["run", "--config", cfg, "--out", str(out2), "--threads", "1"]) == 0
        rep1 = json.loads((out1 / "report.json").read_text())
        rep2 = json.loads((out2 / "report.json").read_text())
        it1 = [r["iterations"] for r in rep1["records"]]
        it2 = [r["iterations"] for r in rep2["records"]]
        assert it1 == it2
        assert _dir_bytes(out1 / "family") == _dir_bytes(out2 / "family")

    def test_gcro_solver_splits_calls(self, identity_family_dir, tmp_path):
        cfg = self._run_config(tmp_path, identity_family_dir, solver="gcro")
        out = tmp_path / "run"
        assert main(["run", "--config", cfg, "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert all(rec["n_rhs"] == 1 for rec in report["records"])

    def test_failed_solve_exits_two_but_completes(self, identity_family_dir, tmp_path):
        cfg = self._run_config(tmp_path, identity_family_dir,
                               solver_config={"tol": 1e-30, "max_iters": 1})
        out = tmp_path / "run"
        code = main(["run", "--config", cfg, "--out", str(out)])
        assert code == 2
        report = json.loads((out / "report.json").read_text())
        assert not report["summary"]["all_converged"]
        assert (out / "report.csv").exists()

    def test_bad_solver_name_usage_error(self, identity_family_dir, tmp_path):
        cfg = self._run_config(tmp_path, identity_family_dir, solver="bogus")
        assert main(["run", "--config", cfg, "--out", str(tmp_path / "x")]) == 1


class TestCompare:
    def _make_run(self, tmp_path, name, precond="none"):
        spec = {"kind": "gyro-analog", "n": 60, "seed": 21}
        cfg = _write(tmp_path / ("%s.json" % name), {
            "model": spec, "levels": 1, "solver": "block-gcro",
            "precond": precond})
        out = tmp_path / name
        assert main(["run", "--config", cfg, "--out", str(out)]) == 0
        return out

    def test_run_vs_itself_zero_savings(self, tmp_path):
        out = self._make_run(tmp_path, "base")
        cmp_dir = tmp_path / "cmp"
        assert main(["compare", str(out), str(out), "--out", str(cmp_dir)]) == 0
        delta = json.loads((cmp_dir / "compare.json").read_text())
        assert delta["totals"]["iterations_saving_pct"] == 0.0
        for step in delta["steps"]:
            assert step["iterations_saving_pct"] == 0.0

    def test_two_solvers_report_savings(self, tmp_path):
        a = self._make_run(tmp_path, "plain", precond="none")
        b = self._make_run(tmp_path, "prec", precond="spai")
        cmp_dir = tmp_path / "cmp"
        assert main(["compare", str(a), str(b), "--out", str(cmp_dir)]) == 0
        delta = json.loads((cmp_dir / "compare.json").read_text())
        assert delta["totals"]["iterations_saving_pct"] > 0.0

    def test_mismatched_families_error(self, tmp_path):
        a = self._make_run(tmp_path, "one")
        spec = {"kind": "gyro-analog", "n": 70, "seed": 22}
        cfg = _write(tmp_path / "other.json", {
            "model": spec, "levels": 1, "solver": "block-gcro", "precond": "none"})
        other = tmp_path / "other"
        assert main(["run", "--config", cfg, "--out", str(other)]) == 0
        assert main(["compare", str(a), str(other)]) == 1

import csv

import pytest

from evolgrad import presets
from evolgrad.cli import main


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestCheck:
    def test_example41_passes(self, tmp_path, capsys):
        assert main(["check", "--preset", "example41", "--box", "2", "--t", "1:2", "--out", str(tmp_path)]) == 0
        rows = _rows(tmp_path / "conditions.csv")
        assert [r["condition"] for r in rows] == ["ellipticity", "algebraic", "c0", "lyapunov"]
        assert all(r["pass"] == "true" for r in rows)
        assert (tmp_path / "report.txt").exists() and (tmp_path / "manifest.txt").exists()
        assert "algebraic" in capsys.readouterr().out

    def test_counterexample_fails(self, tmp_path):
        assert main(["check", "--preset", "wang-counterexample", "--box", "2", "--t", "1:2", "--out", str(tmp_path)]) == 1
        rows = {r["condition"]: r for r in _rows(tmp_path / "conditions.csv")}
        assert rows["algebraic"]["pass"] == "false"
        assert float(rows["algebraic"]["extremal"]) == pytest.approx(12.0)

    def test_spec_file(self, tmp_path):
        doc = tmp_path / "op.ini"
        doc.write_text(presets.instantiate("ou", {"kappa": 2}))
        out = tmp_path / "out"
        assert main(["check", "--spec", str(doc), "--t", "0:1", "--out", str(out)]) == 0
        c0 = {r["condition"]: r for r in _rows(out / "conditions.csv")}["c0"]
        assert float(c0["extremal"]) == pytest.approx(-2.0)

    def test_deterministic(self, tmp_path):
        args = ["check", "--preset", "example41", "--box", "2", "--t", "1:2", "--seed", "7"]
        main(args + ["--out", str(tmp_path / "a")])
        main(args + ["--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "conditions.csv").read_bytes() == (tmp_path / "b" / "conditions.csv").read_bytes()

    def test_manifest_lists_outputs(self, tmp_path):
        main(["check", "--preset", "heat", "--t", "0:1", "--out", str(tmp_path)])
        manifest = (tmp_path / "manifest.txt").read_text()
        for name in ("report.txt", "conditions.csv", "seed", "spec_sha256"):
            assert name in manifest


class TestVerifyGradient:
    def test_heat(self, tmp_path):
        status = main(["verify-gradient", "--preset", "heat", "--f", "exp(-x1^2/2)", "--s", "0", "--T", "0.5",
                       "--c0", "0", "--out", str(tmp_path)])
        assert status == 0
        rows = _rows(tmp_path / "margins.csv")
        kinds = {r["kind"] for r in rows}
        assert {"gradient", "bernstein", "max-principle"} <= kinds
        snaps = sorted(p.name for p in (tmp_path / "snapshots").iterdir())
        assert "u_manifest.csv" in snaps and "v_manifest.csv" in snaps

    def test_sweep_reports_each_c0(self, tmp_path):
        status = main(["verify-gradient", "--preset", "ou", "--f", "sin(x1)*exp(-x1^2/8)", "--s", "0", "--T", "0.2",
                       "--grid", "161", "--c0", "auto", "--c0-sweep=-3,0", "--out", str(tmp_path)])
        # c0 = -3 is too optimistic for the OU semigroup
        assert status == 1
        grads = [r for r in _rows(tmp_path / "margins.csv") if r["kind"] == "gradient"]
        assert len({r["c0"] for r in grads}) == 3


class TestSolveAndProbe:
    def test_solve_writes_snapshots(self, tmp_path):
        status = main(["solve", "--preset", "heat", "--f", "exp(-x1^2)", "--s", "0", "--T", "0.1", "--box", "4",
                       "--grid", "41", "--snapshots", "2", "--out", str(tmp_path)])
        assert status == 0
        assert (tmp_path / "snapshots" / "u_0002.csv").exists()

    def test_nested(self, tmp_path):
        status = main(["solve", "--preset", "heat", "--f", "exp(-x1^2)", "--s", "0", "--T", "0.1", "--box", "2",
                       "--grid", "41", "--radii", "2,3,4", "--out", str(tmp_path)])
        assert status == 0
        assert (tmp_path / "convergence.csv").exists()

    def test_probe(self, tmp_path):
        status = main(["probe-necessity", "--preset", "wang-counterexample", "--s", "1", "--point", "1,0",
                       "--point", "0,1", "--out", str(tmp_path)])
        assert status == 1
        rows = _rows(tmp_path / "conditions.csv")
        assert [r["pass"] for r in rows if r["condition"] == "necessity"] == ["false", "true"]


class TestPresetsCommand:
    def test_list(self, capsys):
        assert main(["presets", "list"]) == 0
        out = capsys.readouterr().out
        assert all(name in out for name in presets.names())

    def test_show(self, capsys):
        assert main(["presets", "show", "example41", "--param", "gamma=4"]) == 0
        assert "gamma = 4" in capsys.readouterr().out


class TestErrors:
    @pytest.mark.parametrize(
        "argv",
        [
            ["check", "--preset", "nope", "--t", "0:1"],
            ["check", "--preset", "heat"],
            ["check", "--preset", "heat", "--t", "2:1"],
            ["check", "--preset", "example41", "--t", "1:2", "--param", "gamma=1"],
            ["check", "--spec", "/nonexistent/op.ini", "--t", "0:1"],
            ["solve", "--preset", "heat", "--f", "x9", "--s", "0", "--T", "1"],
            ["solve", "--preset", "heat", "--f", "x1", "--s", "0", "--T", "1", "--grid", "4"],
            ["presets", "show", "nope"],
            ["bogus"],
        ],
    )
    def test_usage_errors(self, argv, capsys):
        with pytest.raises(SystemExit) as info:
            status = main(argv)
            raise SystemExit(status)
        assert info.value.code == 2
        assert capsys.readouterr().err

    def test_solver_failure_is_status_1(self, tmp_path):
        status = main(["solve", "--preset", "heat", "--f", "sin(3*x1)", "--s", "0", "--T", "0.5", "--box", "4",
                       "--grid", "161", "--scheme", "explicit", "--dt", "0.01", "--out", str(tmp_path)])
        assert status == 1

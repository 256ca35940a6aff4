import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reebflow as rf
from reebflow.errors import ConfigInvalidError, FlatPeriodError
from reebflow.harness import cli, io
from reebflow.harness.config import parse_config_text, validate_config
from reebflow.harness.experiments import (
    ConvergenceTable,
    check_period_varies,
    taper_window,
)


class TestConfig:
    def test_parse_basic(self):
        raw = parse_config_text(
            """
            # a comment
            experiments = weak-time-avg, semigroup-strong
            seed = 7
            hamiltonian.name = quadratic
            noise.K = 6.0
            sde.eps = 0.2, 0.1
            """
        )
        assert raw["experiments"] == ["weak-time-avg", "semigroup-strong"]
        assert raw["seed"] == 7
        assert raw["noise.K"] == 6.0
        assert raw["sde.eps"] == [0.2, 0.1]

    def test_unknown_key_named(self):
        with pytest.raises(ConfigInvalidError) as err:
            validate_config({"nonsense.key": 1})
        assert "nonsense.key" in str(err.value)

    def test_unknown_hamiltonian_named(self):
        with pytest.raises(ConfigInvalidError) as err:
            validate_config({"hamiltonian.name": "volcano"})
        assert "volcano" in str(err.value)

    def test_unknown_experiment(self):
        with pytest.raises(ConfigInvalidError):
            validate_config({"experiments": ["not-an-experiment"]})

    def test_bad_line(self):
        with pytest.raises(ConfigInvalidError):
            parse_config_text("this line has no equals sign")

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), k=st.floats(0.1, 50))
    def test_roundtrip_scalars(self, seed, k):
        raw = parse_config_text(f"seed = {seed}\nnoise.K = {k!r}")
        assert raw["seed"] == seed
        assert raw["noise.K"] == pytest.approx(k)


class TestVerdicts:
    def make(self, values, budget=None, check_final=True):
        return ConvergenceTable("x", [0.2, 0.1, 0.05], values,
                                [0.0] * 3, budget=budget,
                                check_final=check_final)

    def test_decreasing(self):
        assert self.make([3.0, 2.0, 1.0]).strictly_decreasing()
        assert not self.make([3.0, 3.0, 1.0]).strictly_decreasing()
        assert not self.make([1.0, 2.0, 0.5]).strictly_decreasing()

    def test_final_budget(self):
        t = self.make([3.0, 2.0, 1.0], budget=0.5)
        assert t.final_ok()  # 1.0 < 3 * 0.5
        t2 = self.make([3.0, 2.0, 2.0], budget=0.5)
        assert not t2.final_ok()

    def test_verdicts_recomputable_from_rows(self):
        t = self.make([3.0, 2.0, 1.0], budget=0.5)
        rows = t.csv_rows()
        rebuilt = ConvergenceTable(
            "x",
            [r[1] for r in rows],
            [r[2] for r in rows],
            [r[3] for r in rows],
            budget=rows[0][4],
        )
        assert rebuilt.passed() == t.passed()


class TestPeriodCheck:
    def test_flat_period_rejected(self, quadratic_graph):
        with pytest.raises(FlatPeriodError):
            check_period_varies(quadratic_graph)

    def test_varying_period_accepted(self, quartic_graph):
        check_period_varies(quartic_graph)


class TestWindow:
    def test_window_support_and_smoothness(self):
        t = np.linspace(0, 1, 2001)
        w = taper_window(t, 0.1, 0.9)
        assert np.all(w[t < 0.1] == 0)
        assert np.all(w[t > 0.9] == 0)
        assert w.max() == pytest.approx(1.0)
        # C^1: the discrete derivative has no jumps at the joins
        dw = np.diff(w) / np.diff(t)[0]
        assert np.max(np.abs(np.diff(dw))) < 0.1


class TestIO:
    def test_csv_rfc4180_line_endings(self, tmp_path):
        path = tmp_path / "t.csv"
        io.write_csv(path, ["a", "b"], [[1, 2.5], [3, 4.5]])
        raw = path.read_bytes()
        assert b"\r\n" in raw
        assert raw.count(b"\r\n") == 3

    def test_snapshot_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        g = rf.GridFunction2D((-1, 1, -2, 2), rng.normal(size=(8, 12)))
        path = tmp_path / "snap.bin"
        io.write_field_snapshot(path, g, 0.75)
        back, t = io.read_field_snapshot(path)
        assert t == 0.75
        assert back.box == g.box
        assert np.array_equal(back.values, g.values)

    def test_coefficient_export(self, tmp_path, quadratic_graph):
        from reebflow import graphdiff

        coeffs = graphdiff.assemble_coefficients(
            quadratic_graph.field, quadratic_graph)
        path = tmp_path / "coeffs.csv"
        io.write_coefficients_csv(path, quadratic_graph, coeffs)
        lines = path.read_text().splitlines()
        assert lines[0] == "edge,z,period,flux,diffusion,drift"
        assert len(lines) == 1 + len(quadratic_graph.edges[0].z_nodes)


class TestCLI:
    def test_list_experiments(self, capsys):
        assert cli.main(["list-experiments"]) == 0
        out = capsys.readouterr().out
        assert "weak-time-avg" in out

    def test_describe_unknown(self, capsys):
        assert cli.main(["describe", "bogus"]) == 2

    def test_validate_bad_config(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("hamiltonian.name = volcano\n")
        assert cli.main(["validate", str(cfg)]) == 2
        assert "volcano" in capsys.readouterr().err

    def test_run_config_invalid_exit_2(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("unknown.key = 1\n")
        assert cli.main(["run", str(cfg)]) == 2

    def test_empty_experiment_list_ok(self, tmp_path):
        cfg = tmp_path / "empty.cfg"
        out = tmp_path / "out"
        cfg.write_text(f"experiments =\noutput_dir = {out}\n")
        assert cli.main(["run", str(cfg)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["experiments"] == []
        assert manifest["passed"] is True
        assert (out / "tables.csv").exists()

    def test_verdict_failure_exit_1(self, tmp_path):
        # an ascending eps grid cannot produce a strictly decreasing table
        cfg = tmp_path / "fail.cfg"
        out = tmp_path / "out"
        cfg.write_text(
            "experiments = weak-time-avg\n"
            f"output_dir = {out}\n"
            "sde.eps = 0.1, 0.2\n"
            "grid.n = 96\n"
            "graph.n_z = 160\n"
            "time.horizon = 0.4\n"
            "time.probes = 4\n"
        )
        assert cli.main(["run", str(cfg)]) == 1
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["passed"] is False

    def test_exports_written(self, tmp_path):
        cfg = tmp_path / "exp.cfg"
        out = tmp_path / "out"
        cfg.write_text(
            "experiments =\n"
            f"output_dir = {out}\n"
            "hamiltonian.name = quadratic\n"
            "hamiltonian.z_max = 16.0\n"
            "export.coefficients = true\n"
            "export.snapshots = true\n"
            "grid.n = 64\n"
            "time.horizon = 0.2\n"
        )
        assert cli.main(["run", str(cfg)]) == 0
        assert (out / "coefficients.csv").exists()
        assert (out / "graph.json").exists()
        assert (out / "norms.csv").exists()
        snaps = sorted(out.glob("snapshot_*.bin"))
        assert len(snaps) == 2
        field, t = io.read_field_snapshot(snaps[0])
        assert field.values.shape == (64, 64)

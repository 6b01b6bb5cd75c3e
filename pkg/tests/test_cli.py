import json
from pathlib import Path

import numpy as np
import pytest

from qmemctl import ScenarioFormatError
from qmemctl.cli import load_scenario, main

REFERENCE = {
    "n": 2,
    "m": 2,
    "R": [[1.0, 0.0], [0.0, 1.0]],
    "M": [[1.0, 0.0], [0.0, 1.0]],
    "N": [[0.0, 1.0]],
    "D": [[1.0, 0.0]],
    "F": [[1.0, 0.0], [0.0, 1.0]],
    "Pi": [[1.0]],
    "mean0": [1.0, 0.0],
    "cov0": [[0.5, 0.0], [0.0, 0.5]],
    "tau": 5.0,
}


def write_scenario(path: Path, **overrides) -> Path:
    data = dict(REFERENCE)
    data.update(overrides)
    for key in [k for k, v in data.items() if v is None]:
        del data[key]
    path.write_text(json.dumps(data))
    return path


class TestLoadScenario:
    def test_minimal_file_with_defaults(self, tmp_path):
        path = write_scenario(tmp_path / "s.json", mean0=None, cov0=None, tau=2.5)
        spec = load_scenario(path)
        assert (spec.n, spec.m, spec.d, spec.r, spec.s) == (2, 2, 1, 1, 2)
        assert spec.steps == 5000  # 2000 per unit time
        np.testing.assert_array_equal(spec.mean0, np.zeros(2))
        np.testing.assert_array_equal(spec.cov0, 0.5 * np.eye(2))

    def test_flat_matrices_accepted(self, tmp_path):
        path = write_scenario(tmp_path / "s.json", R=[1.0, 0.0, 0.0, 1.0])
        spec = load_scenario(path)
        np.testing.assert_array_equal(spec.R, np.eye(2))

    def test_wrong_entry_count_names_field(self, tmp_path):
        path = write_scenario(tmp_path / "s.json", R=[1.0, 2.0, 3.0])
        with pytest.raises(ScenarioFormatError, match="'R'"):
            load_scenario(path)

    def test_missing_penalty_with_actuation(self, tmp_path):
        path = write_scenario(tmp_path / "s.json", Pi=None)
        with pytest.raises(ScenarioFormatError, match="'Pi'"):
            load_scenario(path)

    def test_missing_required_field(self, tmp_path):
        path = write_scenario(tmp_path / "s.json", D=None)
        with pytest.raises(ScenarioFormatError, match="'D'"):
            load_scenario(path)

    def test_declared_dimension_mismatch(self, tmp_path):
        path = write_scenario(tmp_path / "s.json", d=2)
        with pytest.raises(ScenarioFormatError, match="'N'"):
            load_scenario(path)

    def test_unknown_field_rejected(self, tmp_path):
        path = write_scenario(tmp_path / "s.json", Q=[[1.0]])
        with pytest.raises(ScenarioFormatError, match="unknown"):
            load_scenario(path)

    def test_json_syntax_error_reports_location(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{\n  broken\n}")
        with pytest.raises(ScenarioFormatError, match="line"):
            load_scenario(path)

    def test_no_actuation_scenario(self, tmp_path):
        path = write_scenario(tmp_path / "s.json", N=None, Pi=None)
        spec = load_scenario(path)
        assert spec.d == 0
        assert spec.Pi.shape == (0, 0)


class TestValidateCommand:
    def test_valid_scenario_exits_zero(self, tmp_path, capsys):
        scen = write_scenario(tmp_path / "s.json")
        assert main(["validate", "--scenario", str(scen)]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["valid"] is True
        assert out["violations"] == []

    def test_invalid_scenario_lists_violations(self, tmp_path, capsys):
        scen = write_scenario(tmp_path / "s.json", D=[[1.0, 0.0], [0.0, 1.0]], r=2)
        assert main(["validate", "--scenario", str(scen)]) == 1
        out = json.loads(capsys.readouterr().out)
        assert out["valid"] is False
        assert any("DJD" in v["invariant"] for v in out["violations"])

    def test_unreadable_scenario_reports_error(self, tmp_path, capsys):
        rc = main(["validate", "--scenario", str(tmp_path / "missing.json")])
        assert rc == 1
        assert "error" in capsys.readouterr().err


class TestStageCommands:
    def test_filter_writes_gain_schedule(self, tmp_path):
        scen = write_scenario(tmp_path / "s.json", steps=200)
        out = tmp_path / "out"
        assert main(["filter", "--scenario", str(scen), "--out", str(out)]) == 0
        header, first = (out / "filter.csv").read_text().splitlines()[:2]
        cols = header.split(",")
        assert cols[0] == "t"
        assert "P1_0_0" in cols and "K_3_0" in cols
        assert len(first.split(",")) == len(cols)

    def test_control_writes_gains(self, tmp_path):
        scen = write_scenario(tmp_path / "s.json", steps=200)
        out = tmp_path / "out"
        assert main(["control", "--scenario", str(scen), "--out", str(out)]) == 0
        header = (out / "control.csv").read_text().splitlines()[0]
        assert "Q1_0_0" in header and "c_0_3" in header

    def test_simulate_writes_closedloop(self, tmp_path):
        scen = write_scenario(tmp_path / "s.json", steps=200)
        out = tmp_path / "out"
        assert main(["simulate", "--scenario", str(scen), "--out", str(out),
                     "--moments"]) == 0
        header = (out / "closedloop.csv").read_text().splitlines()[0]
        assert header.split(",")[:4] == ["t", "Delta", "Phi", "H_pont"]
        assert "T_0_0" in header

    def test_steps_override(self, tmp_path):
        scen = write_scenario(tmp_path / "s.json", steps=500)
        out = tmp_path / "out"
        assert main(["filter", "--scenario", str(scen), "--out", str(out),
                     "--steps", "100"]) == 0
        assert len((out / "filter.csv").read_text().splitlines()) == 102

    def test_csv_round_trips_floats_exactly(self, tmp_path):
        from qmemctl import derive_system_matrices, solve_filter

        scen = write_scenario(tmp_path / "s.json", steps=50)
        out = tmp_path / "out"
        main(["filter", "--scenario", str(scen), "--out", str(out)])
        spec = load_scenario(scen)
        filt = solve_filter(derive_system_matrices(spec), spec.cov0, spec.tau, spec.steps)
        line = (out / "filter.csv").read_text().splitlines()[1 + 17]
        values = np.array([float(v) for v in line.split(",")])
        assert values[0] == filt.times[17]
        np.testing.assert_array_equal(values[1:5], filt.P1[17].reshape(-1))
        np.testing.assert_array_equal(values[-4:], filt.K[17].reshape(-1))


class TestFullPipeline:
    def test_full_run_artifacts_and_checks(self, tmp_path, capsys):
        scen = write_scenario(tmp_path / "s.json", steps=1500)
        out = tmp_path / "out"
        rc = main(["full", "--scenario", str(scen), "--out", str(out),
                   "--paths", "4000", "--seed", "1234567"])
        captured = capsys.readouterr()
        summary = json.loads((out / "summary.json").read_text())
        assert rc == 0, (captured.out, summary["checks"])
        for name in ("filter.csv", "control.csv", "closedloop.csv",
                     "montecarlo.csv", "summary.json"):
            assert (out / name).exists()
        assert summary["cost"]["identity_rel_residual"] <= 1e-6
        assert summary["checks"]["cost_identity"]["passed"]
        assert summary["montecarlo"]["paths"] == 4000
        assert summary["decoherence"]["reached"] is True

    def test_decoherence_not_reached_is_reported(self, tmp_path):
        scen = write_scenario(tmp_path / "s.json", steps=800)
        out = tmp_path / "out"
        rc = main(["decoherence", "--scenario", str(scen), "--out", str(out),
                   "--epsilon", "5.0", "--phi-star", "100.0"])
        assert rc == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["decoherence"]["reached"] is False
        assert summary["decoherence"]["time"] is None
        assert summary["decoherence"]["note"] == "not reached within horizon"

    def test_decoherence_reached_with_defaults(self, tmp_path):
        scen = write_scenario(tmp_path / "s.json", steps=800)
        out = tmp_path / "out"
        assert main(["decoherence", "--scenario", str(scen), "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["decoherence"]["phi_star"] == pytest.approx(1.0)
        assert summary["decoherence"]["reached"] is True
        assert 0.0 < summary["decoherence"]["time"] < 5.0

    def test_montecarlo_command_writes_report(self, tmp_path):
        scen = write_scenario(tmp_path / "s.json", steps=400)
        out = tmp_path / "out"
        main(["montecarlo", "--scenario", str(scen), "--out", str(out),
              "--paths", "2000", "--seed", "8"])
        lines = (out / "montecarlo.csv").read_text().splitlines()
        assert lines[0].split(",")[0] == "t"
        assert len(lines) == 11  # header + 10 checkpoints
        summary = json.loads((out / "summary.json").read_text())
        assert "montecarlo" in summary

    def test_reruns_byte_identical(self, tmp_path):
        scen = write_scenario(tmp_path / "s.json", steps=400)
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        args = ["full", "--scenario", str(scen), "--paths", "800", "--seed", "99"]
        rc_a = main(args + ["--out", str(out_a)])
        rc_b = main(args + ["--out", str(out_b)])
        assert rc_a == rc_b
        for name in ("filter.csv", "control.csv", "closedloop.csv",
                     "montecarlo.csv", "summary.json"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

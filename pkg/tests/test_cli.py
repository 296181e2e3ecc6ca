"""Integrationstests der Kommandozeile (Exit-Codes, Ausgabeformate, Determinismus)."""

import io
import json
import logging

import numpy as np
import pandas as pd
import pytest

import skewnorm_cv.cli as cli
from skewnorm_cv.cli import EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, build_parser, default_seed, main, parse_values
from skewnorm_cv.errors import InsufficientDataError, NumericalFailureError, SeriesParseError
from skewnorm_cv.pipeline import FIT_COLUMNS


@pytest.fixture(autouse=True)
def restore_logging():
    # main() konfiguriert den Root-Logger mit force=True neu
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _header(text: str) -> dict:
    config = {}
    for line in text.splitlines():
        if not line.startswith("# ") or "=" not in line:
            continue
        key, value = line[2:].split("=", 1)
        config[key] = value
    return config


class TestParseValues:

    def test_separators_and_comments(self):
        y = parse_values("# Kopf\n1.5, 2.5\n3.5 4.5; 5.5  # Rest\n")
        np.testing.assert_array_equal(y, [1.5, 2.5, 3.5, 4.5, 5.5])

    def test_bad_token(self):
        with pytest.raises(SeriesParseError) as info:
            parse_values("1\n2\nzwei\n4\n")
        assert info.value.line == 3

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            parse_values("1 2 3")


class TestFit:

    def test_mle_on_symmetric_fixture(self, capsys, symmetric_fixture):
        code, out, _ = _run(capsys, "fit", "--input", str(symmetric_fixture), "--method", "mle", "--quiet")
        assert code == EXIT_OK
        assert out.startswith("# skewnorm-cv fit v1\n")
        config = _header(out)
        assert config["method"] == "mle" and config["n"] == "200"
        row = pd.read_csv(io.StringIO(out), comment="#").iloc[0]
        assert abs(row["alpha_hat"]) < 1e-3
        assert row["mu_hat"] == pytest.approx(10.0, abs=1e-6)

    def test_q_mple_echoes_constants(self, capsys):
        code, out, _ = _run(capsys, "fit", "--data", "0.3,1.2,-0.4,2.2,0.9,1.7,0.1,3.0", "--method", "q_mple",
                            "--quiet")
        assert code == EXIT_OK
        config = _header(out)
        assert float(config["lambda"]) == 0.875913
        assert float(config["c2"]) == 0.856250
        assert config["penalty"] == "logCauchy"

    def test_cv_mple_is_byte_identical(self, capsys, symmetric_fixture):
        argv = ["fit", "--input", str(symmetric_fixture), "--method", "cv_mple", "--K", "10", "--seed", "7",
                "--grid-size", "6", "--quiet"]
        first = _run(capsys, *argv)
        second = _run(capsys, *argv)
        assert first[0] == second[0] == EXIT_OK
        assert first[1] == second[1]
        head, trace = first[1].split("# cv_trace\n")
        config = _header(head)
        assert config["K"] == "10" and config["seed"] == "7"
        frame = pd.read_csv(io.StringIO(trace))
        assert list(frame.columns) == ["lambda", "lambda_over_n", "cv_score", "valid"]
        assert len(frame) == 6

    def test_json_output(self, capsys, tmp_path, skewed_sample):
        src = tmp_path / "y.txt"
        src.write_text("\n".join(map(repr, skewed_sample.tolist())), encoding="utf-8")
        dest = tmp_path / "out" / "fit.json"
        code, out, _ = _run(capsys, "fit", "--input", str(src), "--grid-size", "4", "--K", "5",
                            "--format", "json", "--output", str(dest), "--quiet")
        assert code == EXIT_OK
        assert out == ""
        doc = json.loads(dest.read_text(encoding="utf-8"))
        assert doc["schema"] == "skewnorm-cv fit v1"
        assert set(doc) == {"schema", "config", "fit", "cv_trace", "invalid_lambdas"}
        assert doc["fit"]["lambda_cv"] == doc["fit"]["lambda"]
        assert len(doc["cv_trace"]["lambda"]) == 4

    def test_mple_needs_lambda(self, capsys):
        code, _, err = _run(capsys, "fit", "--data", "1,2,3,5,8", "--method", "mple")
        assert code == EXIT_INPUT
        assert "--lam" in err
        code, out, _ = _run(capsys, "fit", "--data", "1,2,3,5,8", "--method", "mple", "--lam", "2",
                            "--penalty", "ridge", "--quiet")
        assert code == EXIT_OK
        assert _header(out)["lambda"] == "2"

    def test_stdin(self, capsys, monkeypatch):
        monkeypatch.setattr("sys.stdin", io.StringIO("0.1\n0.5\n1.9\n-0.7\n2.4\n"))
        code, out, _ = _run(capsys, "fit", "--input", "-", "--method", "mle", "--quiet")
        assert code == EXIT_OK
        assert _header(out)["input"] == "-"

    @pytest.mark.parametrize("argv", [
        ["fit", "--input", "gibt/es/nicht.txt"],
        ["fit", "--data", "1,2,x,4"],
        ["fit", "--data", "1,2,3"],
        ["fit", "--data", "1,2,3,4", "--method", "mom"],
        ["fit", "--data", "1,2,3,4", "--tol", "0"],
        ["fit"],
    ])
    def test_input_errors(self, capsys, argv):
        assert _run(capsys, *argv)[0] == EXIT_INPUT

    def test_undecodable_input(self, capsys, tmp_path):
        src = tmp_path / "y.txt"
        src.write_bytes(b"1\n2\n\xff\xfe\n4\n")
        code, _, err = _run(capsys, "fit", "--input", str(src), "--method", "mle")
        assert code == EXIT_INPUT
        assert "UTF-8" in err

    def test_directory_as_input(self, capsys, tmp_path):
        assert _run(capsys, "fit", "--input", str(tmp_path))[0] == EXIT_INPUT

    def test_numerical_failure(self, capsys, monkeypatch):
        def failing(*args, **kwargs):
            raise NumericalFailureError("künstlicher Fehler", [])

        monkeypatch.setattr(cli, "mle_fit", failing)
        code, _, err = _run(capsys, "fit", "--data", "1,2,3,5", "--method", "mle")
        assert code == EXIT_NUMERIC
        assert "künstlicher Fehler" in err


class TestSample:

    def test_reproducible(self, capsys):
        code, first, _ = _run(capsys, "sample", "--alpha", "0", "--n", "5", "--seed", "1", "--quiet")
        _, second, _ = _run(capsys, "sample", "--alpha", "0", "--n", "5", "--seed", "1", "--quiet")
        assert code == EXIT_OK
        assert first == second
        assert first.startswith("# skewnorm-cv sample v1\n")
        config = _header(first)
        assert config["seed"] == "1" and config["n"] == "5" and config["alpha"] == "0"
        values = [line for line in first.splitlines() if not line.startswith("#")]
        assert len(values) == 5
        np.testing.assert_array_equal(parse_values(first), [float(v) for v in values])

    def test_sample_then_fit(self, capsys, tmp_path):
        path = tmp_path / "y.txt"
        assert main(["sample", "--mu", "1", "--sigma", "2", "--alpha", "3", "--n", "5000", "--seed", "1",
                     "--output", str(path), "--quiet"]) == EXIT_OK
        code, out, _ = _run(capsys, "fit", "--input", str(path), "--method", "mle", "--quiet")
        assert code == EXIT_OK
        row = pd.read_csv(io.StringIO(out), comment="#").iloc[0]
        assert row["alpha_hat"] == pytest.approx(3.0, abs=0.7)
        assert row["sigma_hat"] == pytest.approx(2.0, abs=0.15)

    @pytest.mark.parametrize("argv", [["--n", "0"], ["--n", "5", "--sigma", "-1"]])
    def test_bad_parameters(self, capsys, argv):
        assert _run(capsys, "sample", *argv)[0] == EXIT_INPUT


class TestSimulate:

    ARGS = ["simulate", "setting1", "--scale", "0.05", "--seed", "1", "--K", "5", "--grid-size", "4",
            "--replicates", "2", "--quiet"]

    def test_files_and_counts(self, capsys, tmp_path):
        out_dir = tmp_path / "s1"
        code, out, _ = _run(capsys, *self.ARGS, "--output-dir", str(out_dir))
        assert code == EXIT_OK
        assert out == ""
        assert sorted(p.name for p in tmp_path.iterdir()) == ["s1"]
        records_text = (out_dir / "records.csv").read_text(encoding="utf-8")
        assert records_text.startswith("# skewnorm-cv records v1\n")
        config = _header(records_text)
        assert config["sizes"] == "20,25,30,50"
        records = pd.read_csv(out_dir / "records.csv", comment="#")
        # 4 α₀ × 4 n × 2 Replikate, nur cv_mple
        assert len(records) == 4 * 4 * 2
        assert set(records["method"]) == {"cv_mple"}
        assert "runtime_s" not in records.columns
        summary = pd.read_csv(out_dir / "summary.csv", comment="#")
        assert len(summary) == 16

        again = tmp_path / "s1b"
        assert main([*self.ARGS, "--output-dir", str(again)]) == EXIT_OK
        assert (again / "records.csv").read_bytes() == (out_dir / "records.csv").read_bytes()
        assert (again / "summary.csv").read_bytes() == (out_dir / "summary.csv").read_bytes()

    def test_bad_config(self, capsys, tmp_path):
        assert _run(capsys, "simulate", "setting1", "--replicates", "1", "--output-dir", str(tmp_path))[0] == EXIT_INPUT
        assert _run(capsys, "simulate", "setting7", "--output-dir", str(tmp_path))[0] == EXIT_INPUT

    CONFIG = {"setting": "setting2", "alphas": [0, 1], "sizes": [30], "replicates": 2, "K": 3,
              "grid_size": 4, "mu0_law": "U(-2,2)", "sigma0_law": [0.5, 1.5], "seed": 4}

    def test_config_file(self, capsys, tmp_path):
        cfg_path = tmp_path / "studie.json"
        cfg_path.write_text(json.dumps(self.CONFIG), encoding="utf-8")
        out_dir = tmp_path / "eigen"
        code, _, _ = _run(capsys, "simulate", "--config", str(cfg_path), "--seed", "9",
                          "--output-dir", str(out_dir), "--quiet")
        assert code == EXIT_OK
        records_text = (out_dir / "records.csv").read_text(encoding="utf-8")
        config = _header(records_text)
        assert config["config"] == str(cfg_path)
        assert "preset" not in config
        assert config["sizes"] == "30" and config["alphas"] == "0,1"
        assert config["mu0_law"] == "U(-2,2)" and config["sigma0_law"] == "U(0.5,1.5)"
        assert config["seed"] == "4"
        records = pd.read_csv(out_dir / "records.csv", comment="#")
        # 2 α₀ × 1 n × 2 Replikate × 3 Methoden
        assert len(records) == 2 * 2 * 3
        assert set(records["method"]) == {"mle", "q_mple", "cv_mple"}

    def test_config_file_with_overrides(self, capsys, tmp_path):
        cfg_path = tmp_path / "studie.json"
        cfg_path.write_text(json.dumps(self.CONFIG), encoding="utf-8")
        out_dir = tmp_path / "eigen"
        assert main(["simulate", "--config", str(cfg_path), "--replicates", "3", "--output-dir", str(out_dir),
                     "--quiet"]) == EXIT_OK
        config = _header((out_dir / "records.csv").read_text(encoding="utf-8"))
        assert config["replicates"] == "3" and config["K"] == "3"

    @pytest.mark.parametrize("text", ['{"setting": "setting2", "alphas": [0,', '{"preset": "setting1", "x": 1}'])
    def test_bad_config_file(self, capsys, tmp_path, text):
        cfg_path = tmp_path / "studie.json"
        cfg_path.write_text(text, encoding="utf-8")
        code, _, _ = _run(capsys, "simulate", "--config", str(cfg_path), "--output-dir", str(tmp_path / "x"))
        assert code == EXIT_INPUT
        assert not (tmp_path / "x").exists()

    def test_needs_exactly_one_source(self, capsys, tmp_path):
        cfg_path = tmp_path / "studie.json"
        cfg_path.write_text(json.dumps(self.CONFIG), encoding="utf-8")
        assert _run(capsys, "simulate", "--output-dir", str(tmp_path / "a"))[0] == EXIT_INPUT
        assert _run(capsys, "simulate", "setting1", "--config", str(cfg_path),
                    "--output-dir", str(tmp_path / "b"))[0] == EXIT_INPUT
        assert _run(capsys, "simulate", "--config", str(tmp_path / "fehlt.json"),
                    "--output-dir", str(tmp_path / "c"))[0] == EXIT_INPUT


class TestCluster:

    def test_planted_panel(self, capsys, tmp_path, planted_panel):
        out_dir = tmp_path / "panel"
        code, _, _ = _run(capsys, "cluster", "--input", str(planted_panel), "--method", "q_mple", "--k", "2",
                          "--output-dir", str(out_dir), "--quiet")
        assert code == EXIT_OK
        assert sorted(p.name for p in out_dir.iterdir()) == [
            "cluster_assignment.csv", "cluster_profiles.csv", "cluster_report.json", "fits.csv"]

        fits_text = (out_dir / "fits.csv").read_text(encoding="utf-8")
        assert fits_text.splitlines()[0] == "# skewnorm-cv cluster v1"
        assert ",".join(FIT_COLUMNS) in fits_text.splitlines()

        doc = json.loads((out_dir / "cluster_report.json").read_text(encoding="utf-8"))
        assert {"schema", "config", "k", "sizes", "centres", "assignment", "inertia", "skew_count",
                "dropped_cells"} <= set(doc)
        assert doc["sizes"] == [3, 3]
        a = doc["assignment"]
        assert a["A1"] == a["A2"] == a["A3"] != a["B1"] == a["B2"] == a["B3"]
        assert doc["skew_count"] >= 3
        assert doc["config"]["k"] == 2

    def test_k_zero(self, capsys, tmp_path, planted_panel):
        code, _, _ = _run(capsys, "cluster", "--input", str(planted_panel), "--k", "0",
                          "--output-dir", str(tmp_path / "x"))
        assert code == EXIT_INPUT
        assert not (tmp_path / "x").exists()

    def test_parse_error_reports_line(self, capsys, tmp_path):
        src = tmp_path / "bad.csv"
        src.write_text("name,value\nA,1\nA,2\nA,drei\n", encoding="utf-8")
        code, _, err = _run(capsys, "cluster", "--input", str(src), "--output-dir", str(tmp_path / "x"))
        assert code == EXIT_INPUT
        assert "Zeile 4" in err

    def test_blank_line_keeps_line_numbers(self, capsys, tmp_path):
        src = tmp_path / "bad.csv"
        src.write_text("name,value\nA,1\n\nA,2\nA,xx\n", encoding="utf-8")
        code, _, err = _run(capsys, "cluster", "--input", str(src), "--output-dir", str(tmp_path / "x"))
        assert code == EXIT_INPUT
        assert "Zeile 5" in err

    def test_undecodable_input(self, capsys, tmp_path):
        src = tmp_path / "bad.csv"
        src.write_bytes(b"name,value\nA,1\nA,\xff\xfe\n")
        code, _, err = _run(capsys, "cluster", "--input", str(src), "--output-dir", str(tmp_path / "x"))
        assert code == EXIT_INPUT
        assert "UTF-8" in err
        assert not (tmp_path / "x").exists()

    def test_directory_as_input(self, capsys, tmp_path):
        code, _, _ = _run(capsys, "cluster", "--input", str(tmp_path), "--output-dir", str(tmp_path / "x"))
        assert code == EXIT_INPUT


class TestParser:

    def test_version(self, capsys):
        code, out, _ = _run(capsys, "--version")
        assert code == EXIT_OK
        assert out.startswith("skewnorm-cv ")

    def test_defaults(self):
        args = build_parser().parse_args(["fit", "--data", "1,2,3,4"])
        assert (args.K, args.omega0, args.grid_size) == (10, 0.05, 40)
        assert args.tol == 1e-8 and args.max_iter == 500
        assert args.method == "cv_mple"
        args = build_parser().parse_args(["cluster", "--input", "p.csv", "--output-dir", "out"])
        assert args.k == 4

    def test_seed_from_environment(self, monkeypatch):
        monkeypatch.setenv("SKEWNORM_SEED", "5")
        assert default_seed() == 5
        assert build_parser().parse_args(["sample", "--n", "3"]).seed == 5
        monkeypatch.setenv("SKEWNORM_SEED", "abc")
        assert default_seed() == 0
        monkeypatch.setenv("SKEWNORM_SEED", "-4")
        assert default_seed() == 0
        monkeypatch.delenv("SKEWNORM_SEED")
        assert default_seed() == 0

"""Tests für die Simulationsstudien und ihre Tabellen."""

import json
import math

import numpy as np
import pandas as pd
import pytest

import compute_significance
import skewnorm_cv.sim as sim
from skewnorm_cv.errors import EmptyInputError, InvalidInputError, NumericalFailureError, SeriesParseError
from skewnorm_cv.pem import Q_MPLE_LAMBDA, PemOptions
from skewnorm_cv.sim import (
    RECORD_COLUMNS, RECORDS_SCHEMA, SUMMARY_COLUMNS, Law, SimConfig, SimRecord, load_config,
    preset, read_records, records_frame, run_replicate, run_setting, run_setting1, run_setting2,
    scale_config, summarize, write_records, write_summary,
)

FAST = PemOptions(tol=1e-6, max_iter=200)


def _small(setting="setting2", **kw) -> SimConfig:
    base = dict(alphas=(0.0, 3.0), sizes=(30,), replicates=2, K=3, grid_size=4, seed=7, opts=FAST)
    if setting == "setting2":
        base.update(mu0_law=Law(-2.0, 2.0), sigma0_law=Law(0.5, 1.5))
    base.update(kw)
    return SimConfig(setting=setting, **base)


def _same_records(a, b):
    pd.testing.assert_frame_equal(records_frame(a), records_frame(b))


def _record(r, alpha_hat, mu_hat=0.0, sigma_hat=1.0, lambda_cv=1.0, method="cv_mple", error=""):
    return SimRecord(setting="setting1", alpha0=0.0, n=100, replicate=r, method=method, mu0=0.0,
                     sigma0=1.0, mu_hat=mu_hat, sigma_hat=sigma_hat, alpha_hat=alpha_hat,
                     lambda_cv=lambda_cv, error=error)


class TestLaw:

    def test_fixed(self):
        law = Law.fixed(1.5)
        assert law.is_fixed
        assert law.draw(np.random.default_rng(0)) == 1.5
        assert str(law) == "1.5"

    def test_uniform(self):
        law = Law(-2.0, 2.0)
        rng = np.random.default_rng(1)
        draws = [law.draw(rng) for _ in range(200)]
        assert all(-2.0 <= d < 2.0 for d in draws)
        assert str(law) == "U(-2,2)"

    def test_invalid(self):
        with pytest.raises(InvalidInputError):
            Law(1.0, 0.0)

    def test_parse(self):
        assert Law.parse("U(-2,2)") == Law(-2.0, 2.0)
        assert Law.parse(" U( 0.5 , 1.5 ) ") == Law(0.5, 1.5)
        assert Law.parse(1.5) == Law.fixed(1.5)
        assert Law.parse("1.5") == Law.fixed(1.5)
        assert Law.parse([0.5, 1.5]) == Law(0.5, 1.5)
        for law in (Law(-2.0, 2.0), Law.fixed(0.25)):
            assert Law.parse(str(law)) == law

    @pytest.mark.parametrize("value", [True, None, "N(0,1)", [1.0], [2.0, 1.0], ["a", "b"], {}])
    def test_parse_invalid(self, value):
        with pytest.raises(InvalidInputError):
            Law.parse(value)


class TestConfig:

    def test_presets(self):
        s1 = preset("setting1")
        assert s1.alphas == (0.0, 2.0, 3.0, 4.0)
        assert s1.sizes == (50, 100, 200, 300, 400, 500, 600, 1000)
        assert s1.replicates == 20 and s1.K == 10
        s2 = preset("setting2")
        assert s2.alphas == (0.0, 1.0, 2.0, 3.0, 5.0)
        assert str(s2.mu0_law) == "U(-2,2)" and str(s2.sigma0_law) == "U(0.5,1.5)"
        assert preset("setting2-prose").sizes == (50, 100, 200, 400)

    def test_overrides(self):
        cfg = preset("setting1", replicates=5, seed=3)
        assert cfg.replicates == 5 and cfg.seed == 3
        assert preset("setting1").replicates == 20

    def test_unknown_preset(self):
        with pytest.raises(InvalidInputError):
            preset("setting3")

    @pytest.mark.parametrize("kw", [
        {"replicates": 1},
        {"sizes": (3,)},
        {"seed": -1},
        {"sigma0_law": Law(0.0, 1.0)},
        {"alphas": ()},
    ])
    def test_validation(self, kw):
        with pytest.raises(InvalidInputError):
            _small(**kw)

    def test_unknown_setting(self):
        with pytest.raises(InvalidInputError):
            SimConfig(setting="setting9", alphas=(0,), sizes=(50,))

    def test_scale(self):
        cfg = scale_config(preset("setting1"), 0.1)
        assert cfg.sizes == (20, 30, 40, 50, 60, 100)
        assert cfg.replicates == 2
        assert scale_config(cfg, 1) is cfg
        with pytest.raises(InvalidInputError):
            scale_config(cfg, 0.0)

    def test_to_dict(self):
        d = _small().to_dict()
        assert d["alphas"] == "0,3"
        assert d["sizes"] == "30"
        assert d["mu0_law"] == "U(-2,2)"
        assert d["tol"] == 1e-6


class TestLoadConfig:

    @staticmethod
    def _write(tmp_path, doc, name="studie.json"):
        path = tmp_path / name
        path.write_text(doc if isinstance(doc, str) else json.dumps(doc), encoding="utf-8")
        return path

    def test_standalone(self, tmp_path):
        path = self._write(tmp_path, {
            "setting": "setting2", "alphas": [0, 1], "sizes": [30], "replicates": 2, "K": 3,
            "grid_size": 4, "mu0_law": "U(-2,2)", "sigma0_law": [0.5, 1.5], "tol": 1e-6,
        })
        cfg = load_config(path)
        assert cfg.setting == "setting2"
        assert cfg.alphas == (0.0, 1.0) and cfg.sizes == (30,)
        assert cfg.replicates == 2 and cfg.K == 3 and cfg.grid_size == 4
        assert cfg.mu0_law == Law(-2.0, 2.0) and cfg.sigma0_law == Law(0.5, 1.5)
        assert cfg.opts.tol == 1e-6
        assert cfg.opts.max_iter == PemOptions().max_iter

    def test_preset_base(self, tmp_path):
        path = self._write(tmp_path, {"preset": "setting1", "sizes": [50, 100], "max_iter": 50})
        cfg = load_config(path)
        base = preset("setting1")
        assert cfg.sizes == (50, 100)
        assert cfg.alphas == base.alphas and cfg.replicates == base.replicates
        assert cfg.opts.max_iter == 50 and cfg.opts.tol == base.opts.tol

    def test_defaults_only_fill_missing_keys(self, tmp_path):
        assert load_config(self._write(tmp_path, {"preset": "setting1"}), seed=9).seed == 9
        assert load_config(self._write(tmp_path, {"preset": "setting1", "seed": 4}), seed=9).seed == 4

    def test_to_dict_roundtrip(self, tmp_path):
        cfg = _small()
        d = cfg.to_dict()
        doc = d | {"alphas": [float(a) for a in d["alphas"].split(",")],
                   "sizes": [int(n) for n in d["sizes"].split(",")]}
        assert load_config(self._write(tmp_path, doc)) == cfg

    def test_malformed_json(self, tmp_path):
        path = self._write(tmp_path, '{\n  "preset": "setting1",\n  "sizes": [50,\n}\n')
        with pytest.raises(SeriesParseError) as info:
            load_config(path)
        assert info.value.line == 4

    def test_missing_file(self, tmp_path):
        with pytest.raises(InvalidInputError):
            load_config(tmp_path / "fehlt.json")

    @pytest.mark.parametrize("doc", [
        [1, 2],
        {"preset": "setting1", "replicats": 5},
        {"setting": "setting1", "alphas": [0]},
        {"preset": "setting3"},
        {"preset": "setting1", "replicates": 2.5},
        {"preset": "setting1", "K": True},
        {"preset": "setting1", "sizes": 50},
        {"preset": "setting1", "sigma0_law": "U(0,1)"},
        {"preset": "setting1", "mu0_law": "normal"},
        {"preset": "setting1", "tol": "klein"},
    ])
    def test_invalid(self, tmp_path, doc):
        with pytest.raises(InvalidInputError):
            load_config(self._write(tmp_path, doc))


class TestReplicates:

    def test_record_contents(self):
        cfg = _small()
        records = run_replicate(cfg, 3.0, 30, 0)
        assert [r.method for r in records] == ["cv_mple", "q_mple", "mle"]
        mu0, sigma0 = records[0].mu0, records[0].sigma0
        assert -2.0 <= mu0 <= 2.0 and 0.5 <= sigma0 <= 1.5
        assert all(r.mu0 == mu0 and r.sigma0 == sigma0 for r in records)
        cv_rec, q_rec, mle_rec = records
        assert 0.0 <= cv_rec.lambda_cv <= cfg.omega0 * 30
        assert cv_rec.lam == cv_rec.lambda_cv
        assert q_rec.lam == Q_MPLE_LAMBDA and math.isnan(q_rec.lambda_cv)
        assert mle_rec.lam == 0.0
        assert all(r.error == "" for r in records)
        assert cv_rec.err_alpha == pytest.approx(cv_rec.alpha_hat - 3.0)

    def test_deterministic(self):
        cfg = _small()
        _same_records(run_replicate(cfg, 0.0, 30, 1), run_replicate(cfg, 0.0, 30, 1))

    def test_seed_independent_of_grid(self):
        small = _small(alphas=(3.0,), sizes=(30,))
        large = _small(alphas=(0.0, 3.0), sizes=(30, 40), replicates=3)
        a = [r for r in run_setting(small, ("mle",)) if r.replicate == 1]
        b = [r for r in run_setting(large, ("mle",)) if r.alpha0 == 3.0 and r.n == 30 and r.replicate == 1]
        _same_records(a, b)

    def test_threads_match_sequential(self):
        cfg = _small()
        a = run_setting(cfg, ("q_mple", "mle"), workers=1)
        b = run_setting(cfg, ("q_mple", "mle"), workers=3)
        _same_records(a, b)

    def test_failure_is_recorded(self, monkeypatch):
        def failing(*args, **kwargs):
            raise NumericalFailureError("künstlicher Fehler", [])

        monkeypatch.setattr(sim, "mle_fit", failing)
        records = run_replicate(_small(), 0.0, 30, 0, methods=("q_mple", "mle"))
        assert records[0].error == ""
        assert records[1].error == "NumericalFailureError: künstlicher Fehler"
        assert math.isnan(records[1].alpha_hat)
        summary = summarize(records)
        assert summary.set_index("method").loc["mle", "failed"] == 1

    def test_setting_drivers(self):
        cfg1 = _small("setting1", alphas=(0.0,), replicates=2)
        recs = run_setting1(cfg1)
        assert {r.method for r in recs} == {"cv_mple"}
        assert all(r.mu0 == 0.0 and r.sigma0 == 1.0 for r in recs)
        recs2 = run_setting2(_small(alphas=(1.0,)))
        assert len(recs2) == 2 * 3


class TestTables:

    def test_records_frame_columns(self):
        recs = [_record(0, 0.1)]
        assert list(records_frame(recs).columns) == RECORD_COLUMNS
        assert list(records_frame(recs, with_runtime=True).columns) == RECORD_COLUMNS + ["runtime_s"]

    def test_summary_values(self):
        recs = [_record(r, a, mu_hat=m, lambda_cv=lam)
                for r, (a, m, lam) in enumerate([(0.2, 0.1, 1.0), (-0.4, -0.3, 3.0), (0.0, 0.5, 2.0)])]
        summary = summarize(recs)
        assert list(summary.columns) == SUMMARY_COLUMNS
        row = summary.iloc[0]
        assert row["median_bias_alpha"] == pytest.approx(0.0)
        assert row["median_bias_mu"] == pytest.approx(0.1)
        assert row["se_alpha"] == pytest.approx(np.std([0.2, -0.4, 0.0], ddof=1))
        assert row["rmse_mu"] == pytest.approx(math.sqrt((0.01 + 0.09 + 0.25) / 3))
        assert row["lambda_over_n_mean"] == pytest.approx(0.02)
        assert row["lambda_over_sqrt_n_var"] == pytest.approx(np.var([0.1, 0.3, 0.2], ddof=1))
        assert bool(row["se_defined"])

    def test_summary_single_success(self):
        recs = [_record(0, 0.3), _record(1, math.nan, error="NumericalFailureError: x")]
        row = summarize(recs).iloc[0]
        assert row["failed"] == 1
        assert row["se_alpha"] == 0.0
        assert not bool(row["se_defined"])

    def test_summary_non_cv_has_no_lambda_stats(self):
        row = summarize([_record(0, 0.3, method="mle"), _record(1, 0.1, method="mle")]).iloc[0]
        assert math.isnan(row["lambda_over_n_mean"])

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            summarize([])

    def test_files(self, tmp_path):
        recs = [_record(r, 0.1 * r) for r in range(3)]
        path = write_records(recs, tmp_path / "out" / "records.csv", config={"seed": 7})
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == f"# {RECORDS_SCHEMA}"
        assert lines[1] == "# seed=7"
        assert lines[2] == ",".join(RECORD_COLUMNS)
        df = read_records(path)
        assert list(df.columns) == RECORD_COLUMNS
        assert (df["error"] == "").all()
        np.testing.assert_allclose(df["alpha_hat"], [0.0, 0.1, 0.2])

        summary_path = write_summary(summarize(df), tmp_path / "summary.csv")
        assert summary_path.read_text(encoding="utf-8").startswith("# skewnorm-cv summary v1\n")
        assert list(read_records(summary_path).columns) == SUMMARY_COLUMNS

    def test_summary_from_frame_matches_records(self):
        recs = [_record(r, 0.1 * r) for r in range(4)]
        pd.testing.assert_frame_equal(summarize(recs), summarize(records_frame(recs)))


@pytest.mark.slow
class TestStudies:

    def test_cv_mple_shrinks_symmetric_truth(self):
        cfg = preset("setting2", alphas=(0.0, 1.0), sizes=(500,), replicates=50, seed=11)
        df = records_frame(run_setting2(cfg, workers=4))
        null = df[df["alpha0"] == 0.0]
        med = null.assign(abs_alpha=null["alpha_hat"].abs()).groupby("method")["abs_alpha"].median()
        assert med["cv_mple"] <= med["q_mple"]
        assert med["q_mple"] < med["mle"]

        def paired(m1, m2):
            p = compute_significance.paired_abs_alpha(null, m1, m2)
            assert len(p) >= 45
            return compute_significance.sign_test(p["abs_1"], p["abs_2"])

        # einseitig auf 5 %: Q-MPLE nicht signifikant kleiner als CV-MPLE, beide kleiner als MLE
        assert not paired("q_mple", "cv_mple")["significant"]
        assert paired("cv_mple", "mle")["significant"]
        assert paired("q_mple", "mle")["significant"]
        weak = df[(df["alpha0"] == 1.0) & (df["method"] == "cv_mple")]
        assert weak["alpha_hat"].median() < 1.0

    def test_lambda_scaling(self):
        cfg = preset("setting1", alphas=(0.0, 4.0), sizes=(100, 1000), replicates=20, seed=5)
        summary = summarize(run_setting1(cfg, workers=4)).set_index(["alpha0", "n"])
        assert summary.loc[(0.0, 1000), "lambda_over_n_var"] < summary.loc[(0.0, 100), "lambda_over_n_var"]
        assert summary.loc[(4.0, 1000), "lambda_over_sqrt_n_mean"] < summary.loc[(4.0, 100), "lambda_over_sqrt_n_mean"]

    def test_no_divergence_under_penalty(self):
        cfg = SimConfig(setting="setting1", alphas=(5.0,), sizes=(20,), replicates=200, K=10, seed=3)
        df = records_frame(run_setting(cfg, ("mle", "q_mple"), workers=4))
        hits = df.groupby("method")["theta_at_bound"].sum()
        assert hits["mle"] > 0
        assert hits["q_mple"] == 0

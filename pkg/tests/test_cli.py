import json
import os

import numpy as np
import pytest

from pmrisk import Rng, gh_quantile
from pmrisk.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, ingest_csv, main
from pmrisk.errors import DataError

from conftest import GH_ROWS


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestIngest:
    def test_three_city_file(self, tmp_path):
        rows = ["day,city,pm25"]
        for day in range(1, 6):
            for city in ("a", "b", "c"):
                rows.append(f"{day},{city},{100 + day}")
        series = ingest_csv(_write(tmp_path / "ok.csv", "\n".join(rows) + "\n"))
        assert {s.city for s in series} == {"a", "b", "c"}
        assert all(s.days.size == 5 for s in series)

    def test_na_days_become_gaps(self, tmp_path):
        rows = ["day,city,pm25"]
        for day in range(1, 366):
            value = "NA" if day in (361, 362) else "90.5"
            rows.append(f"{day},bj,{value}")
        series = ingest_csv(_write(tmp_path / "gaps.csv", "\n".join(rows) + "\n"))
        assert series[0].days.size == 363
        assert 361 not in series[0].days and 362 not in series[0].days

    def test_wrong_field_count_names_line(self, tmp_path):
        text = "day,city,pm25\n1,bj,10\n2,bj\n"
        with pytest.raises(DataError, match=":3"):
            ingest_csv(_write(tmp_path / "bad.csv", text))

    def test_nonpositive_concentration(self, tmp_path):
        text = "day,city,pm25\n1,bj,0\n"
        with pytest.raises(DataError, match="nonpositive"):
            ingest_csv(_write(tmp_path / "bad.csv", text))

    def test_duplicate_rejected(self, tmp_path):
        text = "day,city,pm25\n1,bj,10\n1,bj,11\n"
        with pytest.raises(DataError, match="duplicate"):
            ingest_csv(_write(tmp_path / "bad.csv", text))


class TestRunModes:
    def test_simulate_writes_report(self, tmp_path):
        out = tmp_path / "report.csv"
        rc = main([
            "simulate", "--preset", "paper", "--estimator", "is",
            "--alpha", "0.05", "--budget", "5000", "--seed", "1",
            "--out", str(out),
        ])
        assert rc == EXIT_OK
        text = out.read_text()
        assert "# seed: 1" in text
        assert "# model_sha256: " in text
        assert text.splitlines()[-1].startswith("0.05,")

    def test_byte_identical_rerun(self, tmp_path):
        args = [
            "simulate", "--preset", "paper", "--estimator", "sis",
            "--alpha", "0.05,0.01", "--budget", "6000", "--seed", "9",
        ]
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        assert main(args + ["--out", str(out1)]) == EXIT_OK
        assert main(args + ["--out", str(out2)]) == EXIT_OK
        assert out1.read_bytes() == out2.read_bytes()

    def test_curve_monotone(self, tmp_path):
        out = tmp_path / "curve.csv"
        rc = main([
            "curve", "--preset", "paper", "--estimator", "naive",
            "--tau-grid", "100:700:20", "--budget", "4000", "--seed", "2",
            "--out", str(out),
        ])
        assert rc == EXIT_OK
        rows = [l for l in out.read_text().splitlines() if l and not l.startswith("#")]
        eps = [float(r.split(",")[1]) for r in rows[1:]]
        assert len(eps) == 31
        assert all(a >= b for a, b in zip(eps, eps[1:]))

    def test_usage_errors(self, tmp_path):
        assert main(["simulate", "--estimator", "is", "--out", "x.csv"]) == EXIT_USAGE
        assert (
            main([
                "simulate", "--preset", "paper", "--model", "also.json",
                "--out", str(tmp_path / "x.csv"),
            ])
            == EXIT_USAGE
        )
        assert (
            main([
                "simulate", "--preset", "paper", "--alpha", "0.7",
                "--out", str(tmp_path / "x.csv"),
            ])
            == EXIT_USAGE
        )
        assert (
            main([
                "curve", "--preset", "paper",
                "--out", str(tmp_path / "x.csv"),
            ])
            == EXIT_USAGE
        )

    def test_missing_model_file_is_data_error(self, tmp_path):
        rc = main([
            "simulate", "--model", str(tmp_path / "nope.json"),
            "--out", str(tmp_path / "x.csv"),
        ])
        assert rc == EXIT_DATA

    def test_no_partial_artifact_on_failure(self, tmp_path, monkeypatch):
        out = tmp_path / "report.csv"
        import pmrisk.cli as cli_mod

        def boom(*args, **kwargs):
            raise cli_mod.NumericError("synthetic failure")

        monkeypatch.setattr(cli_mod, "build_report", boom)
        rc = main([
            "simulate", "--preset", "paper", "--alpha", "0.05",
            "--budget", "5000", "--seed", "1", "--out", str(out),
        ])
        assert rc == EXIT_NUMERIC
        assert not out.exists()
        assert not list(tmp_path.glob("*.tmp.*"))


def _synthetic_csv(tmp_path, cities, n_days, seed):
    rows = ["day,city,pm25"]
    for j, city in enumerate(cities):
        params = GH_ROWS[city]
        u = Rng(seed).split(j).generator().random(n_days - 1)
        ratios = gh_quantile(params, np.clip(u, 1e-12, 1.0 - 1e-12))
        level = 80.0
        rows.append(f"1,{city},{level!r}")
        for day in range(2, n_days + 1):
            level = max(level * float(np.exp(ratios[day - 2])), 1e-3)
            rows.append(f"{day},{city},{level!r}")
    path = tmp_path / "synthetic.csv"
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    return path


class TestFit:
    def test_single_city_fit_writes_identity_copula(self, tmp_path):
        csv_path = _synthetic_csv(tmp_path, ["Bj"], 500, 7)
        out = tmp_path / "model.json"
        rc = main(["fit", "--csv", str(csv_path), "--out", str(out), "--seed", "3"])
        assert rc == EXIT_OK
        doc = json.loads(out.read_text())
        assert doc["copula"]["sigma"] == [[1.0]]
        assert len(doc["cities"]) == 1
        assert doc["meta"]["copula"]["note"].startswith("single city")

    def test_fitted_model_loads_and_runs(self, tmp_path):
        csv_path = _synthetic_csv(tmp_path, ["Bj"], 400, 11)
        model = tmp_path / "model.json"
        assert main(["fit", "--csv", str(csv_path), "--out", str(model), "--seed", "3"]) == EXIT_OK
        out = tmp_path / "car.csv"
        rc = main([
            "car", "--model", str(model), "--estimator", "naive",
            "--alpha", "0.05", "--budget", "5000", "--seed", "4",
            "--out", str(out),
        ])
        assert rc == EXIT_OK
        assert out.read_text().splitlines()[-1].startswith("0.05,")

    def test_multi_city_fit_document_shape(self, tmp_path):
        csv_path = _synthetic_csv(tmp_path, ["Bj", "Tj", "Cd"], 300, 13)
        out = tmp_path / "model.json"
        rc = main(["fit", "--csv", str(csv_path), "--out", str(out), "--seed", "2"])
        assert rc == EXIT_OK
        doc = json.loads(out.read_text())
        assert [c["name"] for c in doc["cities"]] == ["Bj", "Tj", "Cd"]
        sigma = np.array(doc["copula"]["sigma"])
        assert sigma.shape == (3, 3)
        assert np.allclose(np.diag(sigma), 1.0)
        assert doc["copula"]["family"] == "t" and doc["copula"]["nu"] > 0.0
        assert "loglik_t" in doc["meta"]["copula"]
        assert doc["meta"]["train_rows"] + doc["meta"]["holdout_rows"] == 299

    def test_empty_csv_no_output(self, tmp_path):
        bad = tmp_path / "empty.csv"
        bad.write_text("", encoding="utf-8")
        out = tmp_path / "model.json"
        rc = main(["fit", "--csv", str(bad), "--out", str(out)])
        assert rc == EXIT_DATA
        assert not out.exists()

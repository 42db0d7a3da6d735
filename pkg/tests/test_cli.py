"""Command-line flows: simulate, fit, predict, filter, exit codes."""
import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mbgam.cli import EXIT_DATA, EXIT_INTERNAL, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, auc_score, main


@pytest.fixture(scope="module")
def simdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    rc = main([
        "simulate", "--model", "2", "--n", "700", "--rho", "0.5",
        "--task", "continuous", "--seed", "3", "--out-dir", str(d),
    ])
    assert rc == EXIT_OK
    return d


@pytest.fixture(scope="module")
def fitdir(tmp_path_factory, simdir):
    d = tmp_path_factory.mktemp("fit")
    rc = main([
        "fit", "--train", str(simdir / "train.csv"),
        "--valid", str(simdir / "valid.csv"),
        "--out-dir", str(d), "--rounds", "1", "--npairs", "2",
        "--max-iterations", "8", "--patience", "4", "--threads", "2",
        "--grid-size", "8", "--seed", "0",
    ])
    assert rc == EXIT_OK
    return d


def tiny_csv(path, n=240, seed=0, with_target=True):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    y = X[:, 0] * X[:, 1] + X[:, 2] + 0.1 * rng.normal(size=n)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        names = ["a", "b", "c", "d"]
        w.writerow(names + (["y"] if with_target else []))
        for i in range(n):
            row = [repr(float(v)) for v in X[i]]
            if with_target:
                row.append(repr(float(y[i])))
            w.writerow(row)
    return path


class TestSimulate:
    def test_writes_three_splits_and_manifest(self, simdir):
        for part in ("train", "valid", "test"):
            assert (simdir / f"{part}.csv").exists()
        man = json.loads((simdir / "manifest.json").read_text())
        assert man["command"] == "simulate"
        assert man["scenario"]["split"] == [350, 175, 175]
        assert man["scenario"]["balanced_intercept"] is None
        assert ["x1", "x2"] in man["scenario"]["true_pairs"]
        assert man["seed"] == 3

    def test_split_files_have_header_and_rows(self, simdir):
        with open(simdir / "valid.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == [f"x{j}" for j in range(1, 31)] + ["y"]
        assert len(rows) == 1 + 175

    def test_same_seed_reproduces_files(self, simdir, tmp_path):
        rc = main([
            "simulate", "--model", "2", "--n", "700", "--rho", "0.5",
            "--task", "continuous", "--seed", "3", "--out-dir", str(tmp_path),
        ])
        assert rc == EXIT_OK
        for part in ("train", "valid", "test"):
            assert (tmp_path / f"{part}.csv").read_bytes() == (
                simdir / f"{part}.csv"
            ).read_bytes()


class TestFit:
    def test_outputs_present(self, fitdir):
        assert (fitdir / "model.json").exists()
        assert (fitdir / "importance.csv").exists()
        assert (fitdir / "effects" / "index.json").exists()
        man = json.loads((fitdir / "manifest.json").read_text())
        assert man["command"] == "fit"
        assert set(man["timings"]) == {"load", "fit", "purify", "export"}
        for digest in man["inputs"].values():
            assert len(digest) == 64 and set(digest) <= set("0123456789abcdef")
        assert str(fitdir / "model.json") in man["outputs"]

    def test_effects_index_components_exist(self, fitdir):
        index = json.loads((fitdir / "effects" / "index.json").read_text())
        assert index["grid_size"] == 8
        for comp in index["components"]:
            if comp["kind"] == "main":
                assert (fitdir / "effects" / comp["file"]).exists()
            else:
                assert (fitdir / "effects" / comp["grid_file"]).exists()
                assert (fitdir / "effects" / comp["slices_file"]).exists()

    def test_refit_is_byte_identical(self, simdir, fitdir, tmp_path):
        rc = main([
            "fit", "--train", str(simdir / "train.csv"),
            "--valid", str(simdir / "valid.csv"),
            "--out-dir", str(tmp_path), "--rounds", "1", "--npairs", "2",
            "--max-iterations", "8", "--patience", "4", "--threads", "2",
            "--grid-size", "8", "--seed", "0",
        ])
        assert rc == EXIT_OK
        assert (tmp_path / "model.json").read_bytes() == (fitdir / "model.json").read_bytes()
        assert (tmp_path / "importance.csv").read_bytes() == (
            fitdir / "importance.csv"
        ).read_bytes()

    def test_progress_lines_and_internal_split(self, tmp_path, capsys):
        data = tiny_csv(tmp_path / "d.csv")
        rc = main([
            "fit", "--train", str(data), "--out-dir", str(tmp_path / "out"),
            "--rounds", "1", "--npairs", "2", "--max-iterations", "6",
            "--patience", "3", "--threads", "2", "--grid-size", "6",
        ])
        assert rc == EXIT_OK
        out = capsys.readouterr().out
        assert out.startswith("round 1: ")
        assert "main trees" in out and "interaction trees" in out
        assert "final validation loss: " in out


class TestPredict:
    def test_continuous_predictions_and_metrics(self, fitdir, simdir, tmp_path):
        out = tmp_path / "pred.csv"
        rc = main([
            "predict", "--model-file", str(fitdir / "model.json"),
            "--data", str(simdir / "test.csv"), "--out", str(out),
        ])
        assert rc == EXIT_OK
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["prediction"]
        assert len(rows) == 1 + 175
        man = json.loads(open(str(out) + ".manifest.json").read())
        assert "mse" in man["metrics"]
        # text round-trips exactly to the in-process prediction
        from mbgam.model import load_model, predict as predict_fn
        from mbgam.data import Task, load_csv

        model = load_model(fitdir / "model.json")
        ds = load_csv(simdir / "test.csv", "y", Task.CONTINUOUS)
        want = predict_fn(model, ds)
        got = np.array([float(r[0]) for r in rows[1:]])
        np.testing.assert_array_equal(got, want)

    def test_target_free_data(self, fitdir, simdir, tmp_path):
        src = simdir / "test.csv"
        stripped = tmp_path / "bare.csv"
        with open(src) as fh:
            rows = list(csv.reader(fh))
        assert rows[0][-1] == "y"
        with open(stripped, "w", newline="") as fh:
            w = csv.writer(fh)
            for r in rows:
                w.writerow(r[:-1])
        out = tmp_path / "pred.csv"
        rc = main([
            "predict", "--model-file", str(fitdir / "model.json"),
            "--data", str(stripped), "--out", str(out),
        ])
        assert rc == EXIT_OK
        man = json.loads(open(str(out) + ".manifest.json").read())
        assert "metrics" not in man


@pytest.fixture(scope="module")
def small_csv(tmp_path_factory):
    return tiny_csv(tmp_path_factory.mktemp("flt") / "d.csv", seed=5)


class TestFilter:
    def test_tree_scorer_ranking(self, small_csv, tmp_path, capsys):
        out = tmp_path / "rank.csv"
        rc = main([
            "filter", "--data", str(small_csv), "--npairs", "2",
            "--threads", "2", "--out", str(out),
        ])
        assert rc == EXIT_OK
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["pair_j", "pair_k", "sse", "rank"]
        assert len(rows) == 1 + 6  # all pairs of four predictors
        assert rows[1][:2] == ["a", "b"]
        printed = capsys.readouterr().out.splitlines()
        assert len(printed) == 2 and printed[0].startswith("a:b")
        man = json.loads(open(str(out) + ".manifest.json").read())
        assert man["command"] == "filter" and man["params"]["fast"] is False

    def test_fast_scorer(self, tmp_path):
        # the baseline scorer sees raw residuals, so keep the signal free of
        # main effects it would otherwise soak up through its cut grid
        rng = np.random.default_rng(5)
        X = rng.normal(size=(240, 4))
        y = X[:, 0] * X[:, 1] + 0.1 * rng.normal(size=240)
        data = tmp_path / "d.csv"
        with open(data, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["a", "b", "c", "d", "y"])
            for i in range(240):
                w.writerow([repr(float(v)) for v in X[i]] + [repr(float(y[i]))])
        out = tmp_path / "rank.csv"
        rc = main([
            "filter", "--data", str(data), "--npairs", "2", "--fast",
            "--out", str(out),
        ])
        assert rc == EXIT_OK
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[1][:2] == ["a", "b"]

    def test_model_residual_screening(self, fitdir, simdir, tmp_path):
        out = tmp_path / "rank.csv"
        rc = main([
            "filter", "--data", str(simdir / "train.csv"), "--fast",
            "--model-file", str(fitdir / "model.json"),
            "--npairs", "3", "--out", str(out),
        ])
        assert rc == EXIT_OK
        man = json.loads(open(str(out) + ".manifest.json").read())
        assert len(man["inputs"]) == 2


class TestBinaryFlow:
    def test_simulate_fit_predict(self, tmp_path):
        sim = tmp_path / "sim"
        rc = main([
            "simulate", "--model", "3", "--n", "500", "--rho", "0.5",
            "--task", "binary", "--seed", "1", "--out-dir", str(sim),
        ])
        assert rc == EXIT_OK
        man = json.loads((sim / "manifest.json").read_text())
        assert isinstance(man["scenario"]["balanced_intercept"], float)

        fit = tmp_path / "fit"
        rc = main([
            "fit", "--train", str(sim / "train.csv"),
            "--valid", str(sim / "valid.csv"), "--task", "binary",
            "--out-dir", str(fit), "--rounds", "1", "--npairs", "2",
            "--max-iterations", "5", "--patience", "3", "--threads", "2",
            "--grid-size", "6",
        ])
        assert rc == EXIT_OK

        out = tmp_path / "pred.csv"
        rc = main([
            "predict", "--model-file", str(fit / "model.json"),
            "--data", str(sim / "test.csv"), "--out", str(out),
        ])
        assert rc == EXIT_OK
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["prediction", "probability"]
        probs = np.array([float(r[1]) for r in rows[1:]])
        assert np.all((probs > 0) & (probs < 1))
        man = json.loads(open(str(out) + ".manifest.json").read())
        assert set(man["metrics"]) == {"log_loss", "auc"}
        assert 0.5 <= man["metrics"]["auc"] <= 1.0


class TestExitCodes:
    def test_usage_errors(self):
        with pytest.raises(SystemExit) as e:
            main([])
        assert e.value.code == EXIT_USAGE
        with pytest.raises(SystemExit) as e:
            main(["frobnicate"])
        assert e.value.code == EXIT_USAGE
        with pytest.raises(SystemExit) as e:
            main(["simulate", "--model", "2", "--n", "100"])  # no --out-dir
        assert e.value.code == EXIT_USAGE

    def test_validation_errors(self, simdir, tmp_path, capsys):
        rc = main([
            "fit", "--train", str(simdir / "train.csv"),
            "--out-dir", str(tmp_path), "--learning-rate", "0",
        ])
        assert rc == EXIT_VALIDATION
        assert "learning_rate" in capsys.readouterr().err
        rc = main([
            "simulate", "--model", "1", "--n", "100", "--rho", "1.0",
            "--out-dir", str(tmp_path),
        ])
        assert rc == EXIT_VALIDATION
        rc = main([
            "fit", "--train", str(simdir / "train.csv"),
            "--out-dir", str(tmp_path), "--task", "ordinal",
        ])
        assert rc == EXIT_VALIDATION

    def test_data_errors(self, fitdir, tmp_path, capsys):
        rc = main([
            "fit", "--train", str(tmp_path / "missing.csv"),
            "--out-dir", str(tmp_path),
        ])
        assert rc == EXIT_DATA
        rc = main([
            "predict", "--model-file", str(tmp_path / "missing.json"),
            "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o.csv"),
        ])
        assert rc == EXIT_DATA
        broken = tmp_path / "broken.json"
        broken.write_text("{not json")
        rc = main([
            "predict", "--model-file", str(broken),
            "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o.csv"),
        ])
        assert rc == EXIT_DATA
        capsys.readouterr()

    def test_internal_errors_return_four(self, simdir, tmp_path, monkeypatch, capsys):
        import mbgam.cli as cli_mod

        def boom(*a, **k):
            raise RuntimeError("wires crossed")

        monkeypatch.setattr(cli_mod, "fit_model", boom)
        rc = main([
            "fit", "--train", str(simdir / "train.csv"),
            "--out-dir", str(tmp_path),
        ])
        assert rc == EXIT_INTERNAL
        assert "wires crossed" in capsys.readouterr().err


class TestAuc:
    def test_perfect_and_reversed(self):
        y = np.array([0, 0, 1, 1], dtype=float)
        assert auc_score(y, np.array([0.1, 0.2, 0.8, 0.9])) == 1.0
        assert auc_score(y, np.array([0.9, 0.8, 0.2, 0.1])) == 0.0

    def test_midrank_ties(self):
        y = np.array([0, 0, 1, 1], dtype=float)
        s = np.array([1.0, 2.0, 3.0, 2.0])
        # pairwise: (3 vs 1) win, (3 vs 2) win, (2 vs 1) win, (2 vs 2) half
        assert auc_score(y, s) == pytest.approx(0.875)
        assert auc_score(y, np.ones(4)) == pytest.approx(0.5)

    def test_single_class_rejected(self):
        with pytest.raises(ValueError, match="both classes"):
            auc_score(np.ones(4), np.arange(4.0))


class TestModuleEntry:
    def test_python_dash_m_runs(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "mbgam.cli", "simulate", "--model", "1",
             "--n", "40", "--out-dir", str(tmp_path)],
            capture_output=True, text=True, timeout=120,
        )
        assert proc.returncode == 0, proc.stderr
        assert (tmp_path / "train.csv").exists()
        assert "wrote 20/10/10 rows" in proc.stdout

import csv
import json
import logging
import subprocess
import sys

import pytest

from stargraph import data
from stargraph.cli import main

FAST = ["--max-epochs", "2", "--validate-every", "1", "--lstm-hidden", "8", "--fc-dim", "8"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("ds") / "synth.jsonl.gz"
    assert main(["generate", "--n-per-class", "3", "--out", str(path), "--seed", "1"]) == 0
    return path


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--dataset", str(dataset), "--out", str(out), "--seed", "3", *FAST]) == 0
    return out


def csv_rows(path):
    return list(csv.reader(line for line in path.read_text().splitlines() if not line.startswith("#")))


class TestGenerate:
    def test_reproducible_bytes(self, tmp_path):
        out = tmp_path / "d.jsonl.gz"
        main(["generate", "--n-per-class", "2", "--out", str(out), "--seed", "5"])
        first = out.read_bytes()
        main(["generate", "--n-per-class", "2", "--out", str(out), "--seed", "5"])
        assert out.read_bytes() == first

    def test_n_per_class(self, tmp_path, capsys):
        out = tmp_path / "d.jsonl"
        assert main(["generate", "--n-per-class", "10", "--out", str(out)]) == 0
        ds = data.load(out)
        assert len(ds) == 10 * ds.classes == 40
        assert "40 sequences" in capsys.readouterr().out

    def test_invalid_spec_leaves_no_file(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"classes": [{"name": "a", "centroids": [{"offset": [0, 0, 0]}]}]}))
        out = tmp_path / "d.jsonl"
        assert main(["generate", "--spec", str(spec), "--out", str(out)]) == 2
        assert list(tmp_path.iterdir()) == [spec]

    def test_spec_file(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps(data.synth4_spec().to_dict()))
        assert main(["generate", "--spec", str(spec), "--n-per-class", "1", "--out", str(tmp_path / "d.jsonl")]) == 0

    def test_env_seed_and_config_precedence(self, tmp_path, monkeypatch):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_per_class": 2, "seed": 8}))
        monkeypatch.setenv("STARGRAPH_SEED", "6")
        main(["generate", "--out", str(tmp_path / "a.jsonl"), "--config", str(cfg), "--n-per-class", "1"])
        header = json.loads((tmp_path / "a.jsonl").read_text().splitlines()[0])
        assert header["meta"]["config"]["n_per_class"] == 1
        assert header["meta"]["config"]["seed"] == 8
        main(["generate", "--out", str(tmp_path / "b.jsonl"), "--n-per-class", "1"])
        header = json.loads((tmp_path / "b.jsonl").read_text().splitlines()[0])
        assert header["meta"]["config"]["seed"] == 6


class TestTrain:
    def test_outputs(self, trained):
        for name in ("checkpoint.json", "train_log.csv", "eval.json", "confusion.csv", "config.json"):
            assert (trained / name).exists(), name
        assert (trained / "train_log.csv").read_text().startswith("# config: ")
        doc = json.loads((trained / "eval.json").read_text())
        assert doc["split"] == "val" and doc["config"]["seed"] == 3
        ckpt = json.loads((trained / "checkpoint.json").read_text())
        assert ckpt["graph"]["kind"] == "dstar" and ckpt["graph"]["center"]["point"] == [0.0, 1.0, 0.0]
        assert ckpt["config"]["lr"] == 1e-3 and ckpt["seed"] == 3

    def test_deterministic(self, dataset, trained, tmp_path):
        assert main(["train", "--dataset", str(dataset), "--out", str(tmp_path), "--seed", "3", *FAST]) == 0
        assert (tmp_path / "train_log.csv").read_text() != ""
        log_a = csv_rows(trained / "train_log.csv")
        assert csv_rows(tmp_path / "train_log.csv") == log_a
        a = json.loads((trained / "checkpoint.json").read_text())["params"]
        assert json.loads((tmp_path / "checkpoint.json").read_text())["params"] == a

    @pytest.mark.parametrize("flags", [["--graph", "knn", "--k", "5"], ["--graph", "radius", "--r", "0.5"],
                                       ["--graph", "ustar", "--center", "mean"], ["--preprocess"]])
    def test_graph_choices(self, dataset, tmp_path, flags):
        assert main(["train", "--dataset", str(dataset), "--out", str(tmp_path), *FAST, "--max-epochs", "1",
                     *flags]) == 0

    def test_unknown_graph_is_usage_error(self, dataset, tmp_path, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--dataset", str(dataset), "--out", str(tmp_path), "--graph", "mesh"])
        assert exc.value.code == 1
        err = capsys.readouterr().err
        assert all(t in err for t in ("dstar", "ustar", "knn", "radius", "fc", "empty"))

    @pytest.mark.parametrize("flags", [["--center", "1,2"], ["--gcn-dims", "8"], ["--train-subjects", "1,2",
                                       "--val-subjects", "2"], ["--k", "0", "--graph", "knn"]])
    def test_bad_values_are_usage_errors(self, dataset, tmp_path, flags):
        assert main(["train", "--dataset", str(dataset), "--out", str(tmp_path), *flags]) == 1

    def test_missing_dataset_is_data_error(self, tmp_path):
        assert main(["train", "--dataset", str(tmp_path / "none.jsonl"), "--out", str(tmp_path)]) == 2

    def test_malformed_dataset_is_data_error(self, tmp_path, capsys):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"format": "pcseq", "version": 1, "seq_len": 2, "classes": 2}\n{"label": 0\n')
        assert main(["train", "--dataset", str(path), "--out", str(tmp_path)]) == 2
        assert "line 2" in capsys.readouterr().err

    def test_empty_split_is_data_error(self, dataset, tmp_path):
        assert main(["train", "--dataset", str(dataset), "--out", str(tmp_path), "--val-subjects", "99"]) == 2


class TestEval:
    def test_report_and_confusion(self, dataset, trained, tmp_path):
        conf = tmp_path / "conf.csv"
        assert main(["eval", "--checkpoint", str(trained / "checkpoint.json"), "--dataset", str(dataset),
                     "--out", str(tmp_path), "--confusion-csv", str(conf), "--subjects", "1,2,3,4"]) == 0
        rows = csv_rows(conf)
        assert len(rows) == 4 and all(len(r) == 4 for r in rows)
        assert sum(int(v) for r in rows for v in r) == 8
        doc = json.loads((tmp_path / "eval.json").read_text())
        for key in ("overall_accuracy", "per_class_accuracy", "confusion", "avg_inference_ms", "config"):
            assert doc[key] is not None
        assert doc["config"]["graph_resolved"]["kind"] == "dstar"

    def test_graph_override_warns(self, dataset, trained, tmp_path, caplog):
        with caplog.at_level(logging.WARNING):
            assert main(["eval", "--checkpoint", str(trained / "checkpoint.json"), "--dataset", str(dataset),
                         "--out", str(tmp_path), "--graph", "fc"]) == 0
        assert "override" in caplog.text
        assert json.loads((tmp_path / "eval.json").read_text())["config"]["graph_resolved"]["kind"] == "fc"

    def test_missing_checkpoint(self, dataset, tmp_path):
        assert main(["eval", "--checkpoint", str(tmp_path / "x.json"), "--dataset", str(dataset),
                     "--out", str(tmp_path)]) == 2


class TestAblate:
    def test_rows(self, dataset, tmp_path):
        assert main(["ablate", "--dataset", str(dataset), "--out", str(tmp_path), "--seed", "4", *FAST,
                     "--max-epochs", "1"]) == 0
        lines = (tmp_path / "ablation.csv").read_text().splitlines()
        assert lines[0].startswith("# config: ")
        rows = list(csv.DictReader(lines[1:]))
        assert len(rows) == 10
        assert {(r["graph"], r["center"]) for r in rows} == {
            *((g, c) for g in ("dstar", "ustar") for c in ("static", "mean", "zero")),
            ("knn", ""), ("radius", ""), ("fc", ""), ("empty", "")}
        assert all(r["seed"] == "4" for r in rows)
        assert all(set(r) == set(rows[0]) for r in rows)


class TestBench:
    def test_scaling_and_latency(self, dataset, trained, tmp_path):
        assert main(["bench", "--out", str(tmp_path), "--types", "dstar,fc", "--grid", "8,16,32", "--reps", "3",
                     "--checkpoint", str(trained / "checkpoint.json"), "--dataset", str(dataset),
                     "--latency-reps", "1"]) == 0
        doc = json.loads((tmp_path / "scaling.json").read_text())
        assert [r["graph_type"] for r in doc["reports"]] == ["dstar", "fc"]
        assert doc["config"]["reps"] == 3
        for name in ("scaling.csv", "scaling.tsv", "latency.json"):
            assert (tmp_path / name).exists()

    def test_bad_grid_is_usage_error(self, tmp_path):
        assert main(["bench", "--out", str(tmp_path), "--types", "dstar", "--grid", "32,16"]) == 1


class TestEntryPoint:
    def test_module_exit_codes(self, tmp_path):
        run = lambda *a: subprocess.run([sys.executable, "-m", "stargraph", *a], capture_output=True, text=True)
        assert run().returncode == 1
        assert run("generate", "--out", str(tmp_path / "d.jsonl"), "--n-per-class", "1").returncode == 0
        assert run("eval", "--checkpoint", "x", "--dataset", "y", "--out", str(tmp_path)).returncode == 2
        assert run("train", "--dataset", str(tmp_path / "d.jsonl"), "--out", str(tmp_path),
                   "--config", str(tmp_path / "missing.json")).returncode == 1

import json

import numpy as np
import pytest

from dmlbench.cli import main
from dmlbench.encoder import load_encoder
from dmlbench.harness import fold_plans_from_json, load_dataset
from dmlbench.proxies import load_proxies


@pytest.fixture()
def data_file(tmp_path):
    path = tmp_path / "data.tsv"
    assert main(["synth", "--classes", "2", "--size", "60", "--noise", "0.1",
                 "--seed", "3", "--out", str(path)]) == 0
    return path


class TestSynthCommand:
    def test_writes_loadable_dataset(self, data_file):
        ds = load_dataset(data_file)
        assert ds.size == 60
        assert ds.num_classes == 2

    def test_deterministic_output(self, tmp_path):
        a, b = tmp_path / "a.tsv", tmp_path / "b.tsv"
        for out in (a, b):
            main(["synth", "--size", "30", "--seed", "9", "--out", str(out)])
        assert a.read_bytes() == b.read_bytes()


class TestFoldsCommand:
    def test_stdout_json(self, data_file, capsys):
        assert main(["folds", "--data", str(data_file), "--folds", "3",
                     "--shots", "20", "--seed", "3"]) == 0
        plans, shot, master = fold_plans_from_json(capsys.readouterr().out)
        assert len(plans) == 3 and shot == 20 and master == 3

    def test_file_output_byte_identical(self, data_file, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        args = ["folds", "--data", str(data_file), "--folds", "2", "--shots", "20"]
        main(args + ["--out", str(a)])
        main(args + ["--out", str(b)])
        assert a.read_bytes() == b.read_bytes()

    def test_bad_shot_value(self, data_file):
        assert main(["folds", "--data", str(data_file), "--shots", "37"]) == 2


class TestTrainEvalCommands:
    def test_train_eval_round_trip(self, data_file, tmp_path, capsys):
        enc = tmp_path / "enc.bin"
        prox = tmp_path / "prox.bin"
        log = tmp_path / "log.json"
        code = main([
            "train", "--data", str(data_file), "--loss", "proxyanchor",
            "--beta", "0.5", "--epochs", "2", "--out-encoder", str(enc),
            "--out-proxies", str(prox), "--out-log", str(log),
        ])
        assert code == 0
        assert "trained proxyanchor" in capsys.readouterr().out
        params = load_encoder(enc)
        bank = load_proxies(prox)
        assert params.num_classes == 2 and bank.classes == 2
        assert json.loads(log.read_text())["config"]["epochs"] == 2

        assert main(["eval", "--data", str(data_file), "--encoder", str(enc)]) == 0
        result = json.loads(capsys.readouterr().out)
        assert set(result) == {"macro_f1", "per_class_f1", "confusion", "n_test"}
        assert result["n_test"] == 60

        assert main(["eval", "--data", str(data_file), "--encoder", str(enc),
                     "--proxies", str(prox), "--blended", "--beta-inf", "0.5"]) == 0
        blended = json.loads(capsys.readouterr().out)
        assert 0.0 <= blended["macro_f1"] <= 1.0

    def test_proxyfree_loss_refuses_proxy_output(self, data_file, tmp_path, capsys):
        code = main([
            "train", "--data", str(data_file), "--loss", "supcon",
            "--epochs", "1", "--out-proxies", str(tmp_path / "p.bin"),
        ])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_blended_eval_needs_proxies(self, data_file, tmp_path, capsys):
        enc = tmp_path / "enc.bin"
        main(["train", "--data", str(data_file), "--epochs", "1",
              "--out-encoder", str(enc)])
        capsys.readouterr()
        assert main(["eval", "--data", str(data_file), "--encoder", str(enc),
                     "--blended"]) == 2


class TestGridReportCommands:
    def test_grid_and_report(self, data_file, tmp_path, capsys):
        report_path = tmp_path / "report.json"
        code = main([
            "grid", "--data", str(data_file), "--loss", "npairs",
            "--folds", "2", "--shots", "20", "--epochs", "1",
            "--seed", "3", "--out", str(report_path),
        ])
        assert code == 0
        table = capsys.readouterr().out
        assert table.startswith("loss")
        assert "npairs" in table

        report = json.loads(report_path.read_text())
        assert report["grid"]["n_points"] == 5  # npairs sweeps beta only
        assert report["num_folds"] == 2

        assert main(["report", "--report", str(report_path), "--format", "csv"]) == 0
        csv_out = capsys.readouterr().out
        assert csv_out.startswith("name,fold,macro_f1")
        # one row per (loss row, fold) pair plus the header
        assert len(csv_out.strip().split("\n")) == 1 + 2 * len(report["rows"])

        assert main(["report", "--report", str(report_path), "--format", "json"]) == 0
        assert json.loads(capsys.readouterr().out) == report

    def test_grid_rejects_cce(self, data_file, capsys):
        assert main(["grid", "--data", str(data_file), "--loss", "cce"]) == 2
        assert "error:" in capsys.readouterr().err


class TestGradcheckCommand:
    def test_small_run_passes(self, capsys):
        assert main(["gradcheck", "--instances", "2", "--seed", "17"]) == 0
        out = capsys.readouterr().out
        lines = out.strip().split("\n")
        assert len(lines) == 7
        assert all(" ok " in line for line in lines)


class TestConfigFile:
    def test_precedence_flag_over_file_over_default(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"size": 30, "noise": 0.0}), encoding="utf-8")
        out = tmp_path / "ds.tsv"
        # --size wins over the file; the file's noise wins over the default
        assert main(["synth", "--config", str(cfg), "--size", "20",
                     "--out", str(out)]) == 0
        ds = load_dataset(out)
        assert ds.size == 20
        assert all(not w.startswith("n") for t in ds.texts for w in t.split())

    def test_config_must_be_object(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text("[1, 2]", encoding="utf-8")
        assert main(["synth", "--config", str(cfg), "--out",
                     str(tmp_path / "x.tsv")]) == 2
        assert "JSON object" in capsys.readouterr().err

    def test_missing_data_file(self, capsys):
        assert main(["folds", "--data", "/nonexistent/path.tsv"]) == 2
        assert "error:" in capsys.readouterr().err

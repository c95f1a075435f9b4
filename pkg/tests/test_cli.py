import json

import numpy as np
import pytest

from autopinn.cli import ConfigError, RunConfig, load_config, main
from autopinn.data import load_csv
from autopinn.network import build, ArchSpec
from autopinn.physics import NOMINAL
from autopinn.report import markdown_row, read_report_csv
from autopinn.search import read_search_log
from autopinn.training import MaeReport, PinnModel, load_model, save_model

FAST = ["--set", "epochs=20", "--set", "lbfgs_max_iter=5"]
M_PINN_ROW = (0.8, 13.1, 1.2, 4.5, 27.9, 0.1, 0.3, 0.1, 0.1, 1.9)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out", str(d), "--seed", "3"]) == 0
    return d


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


class TestConfig:
    def test_defaults(self):
        cfg = load_config()
        assert cfg == RunConfig()
        assert cfg.search_config.controller_lr == 0.001 and cfg.train_config.epochs == 2000
        assert cfg.true_params == NOMINAL

    def test_three_layer_precedence(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"seed": 5, "trials": 7, "adam_lr": 0.01}))
        cfg = load_config(p, {"seed": 9, "batch": "7"})
        assert cfg.seed == 9            # flag beats file
        assert cfg.trials == 7          # file beats default
        assert cfg.adam_lr == 0.01
        assert cfg.batch == 7
        assert cfg.epochs == 2000       # default

    def test_cli_flag_beats_file(self, tmp_path, data_dir):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"seed": 5, "out": str(tmp_path / "a")}))
        assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "b" / "dataset.csv").exists() and not (tmp_path / "a").exists()
        manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
        assert manifest["seed"] == 5

    @pytest.mark.parametrize("doc", ['{"nope": 1}', '{"trials": "many"}', '[1, 2]', '{bad json',
                                     '{"trials": 2.5}', '{"use_baseline": "perhaps"}',
                                     '{"batch": 10, "trials": 5}', '{"C": -1}'])
    def test_bad_config(self, tmp_path, doc):
        p = tmp_path / "c.json"
        p.write_text(doc)
        with pytest.raises(ConfigError):
            load_config(p)
        assert main(["simulate", "--config", str(p), "--out", str(tmp_path)]) == 2

    def test_bad_set(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path), "--set", "seed"]) == 2
        assert main(["simulate", "--out", str(tmp_path), "--set", "bogus=1"]) == 2

    def test_bool_coercion(self):
        assert load_config(None, {"use_baseline": "false"}).use_baseline is False


class TestSimulate:
    def test_default(self, data_dir):
        ds = load_csv(data_dir / "dataset.csv")
        assert len(ds) == 360 and ds.ground_truth == NOMINAL
        manifest = json.loads((data_dir / "manifest.json").read_text())
        assert manifest["seed"] == 3 and manifest["version"] and manifest["config"]["samples_per_op"] == 120

    def test_same_seed_identical(self, tmp_path, data_dir):
        assert main(["simulate", "--out", str(tmp_path), "--seed", "3"]) == 0
        assert files(tmp_path) == files(data_dir)

    def test_unwritable(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        target = blocker / "sub"
        assert main(["simulate", "--out", str(target)]) == 3
        assert str(target) in capsys.readouterr().err

    def test_custom_physics(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path), "--set", "V_in=10", "--set", "samples_per_op=4"]) == 0
        ds = load_csv(tmp_path / "dataset.csv")
        assert len(ds) == 12 and ds.ground_truth.V_in == 10.0


class TestTrain:
    def test_minimal_arch(self, tmp_path, data_dir, capsys):
        rc = main(["train", "--data", str(data_dir / "dataset.csv"), "--out", str(tmp_path),
                   "--arch", "0,tanh,0,tanh,0,tanh,0,tanh,0,tanh", *FAST])
        assert rc == 0
        out = capsys.readouterr().out
        assert "| PINN |" in out and "| 6 |" in out
        (name, rep), = read_report_csv(tmp_path / "report.csv")
        assert rep.param_count == 6
        assert rep.average == pytest.approx(np.mean(rep.per_param), rel=1e-15)
        for f in ("model.txt", "loss_history.csv", "report.md"):
            assert (tmp_path / f).exists()

    def test_bad_arch(self, tmp_path, data_dir):
        assert main(["train", "--data", str(data_dir / "dataset.csv"), "--out", str(tmp_path),
                     "--arch", "20,tanh,0"]) == 2

    def test_missing_dataset(self, tmp_path):
        assert main(["train", "--out", str(tmp_path)]) == 3

    def test_deterministic(self, tmp_path, data_dir):
        for d in ("a", "b"):
            assert main(["train", "--data", str(data_dir / "dataset.csv"), "--out", str(tmp_path / d),
                         "--seed", "4", "--arch", "20,tanh,0,tanh,0,tanh,0,tanh,20,relu", *FAST]) == 0
        assert files(tmp_path / "a") == files(tmp_path / "b")

    def test_holdout(self, tmp_path, data_dir, capsys):
        assert main(["train", "--data", str(data_dir / "dataset.csv"), "--out", str(tmp_path),
                     "--arch", "0,tanh,0,tanh,0,tanh,0,tanh,0,tanh", "--set", "holdout=0.25", *FAST]) == 0
        assert "(holdout)" in capsys.readouterr().out


class TestSearch:
    def test_single_trial(self, tmp_path, data_dir):
        assert main(["search", "--data", str(data_dir / "dataset.csv"), "--out", str(tmp_path),
                     "--trials", "1", "--batch", "1", "--workers", "1", "--set", "random_baselines=0", *FAST]) == 0
        assert len(read_search_log(tmp_path / "search_log.csv")) == 1
        assert (tmp_path / "best_model.txt").exists()

    def test_seeded_logs_identical(self, tmp_path, data_dir):
        for d in ("a", "b"):
            assert main(["search", "--data", str(data_dir / "dataset.csv"), "--out", str(tmp_path / d),
                         "--trials", "4", "--batch", "2", "--seed", "8", "--workers", "1",
                         "--set", "random_baselines=2", *FAST]) == 0
        assert files(tmp_path / "a") == files(tmp_path / "b")
        report = (tmp_path / "a" / "report.md").read_text()
        assert "AutoPINN" in report and "R-PINN-2" in report

    def test_constraint_respected(self, tmp_path, data_dir):
        assert main(["search", "--data", str(data_dir / "dataset.csv"), "--out", str(tmp_path),
                     "--constraint", "3000", "--trials", "6", "--batch", "3", "--workers", "1",
                     "--set", "random_baselines=0", *FAST]) == 0
        trials = read_search_log(tmp_path / "search_log.csv")
        if any(t.feasible for t in trials):
            assert load_model(tmp_path / "best_model.txt").param_count <= 3000


class TestEvaluate:
    def test_exact_model_zero_row(self, tmp_path, capsys):
        enc = build(ArchSpec.uniform(0, "tanh"))
        save_model(PinnModel(enc, np.zeros(10), NOMINAL.as_array(), np.zeros(2), np.ones(2)), tmp_path / "m.txt")
        (tmp_path / "t.json").write_text(json.dumps({"ground_truth": NOMINAL.as_dict()}))
        assert main(["evaluate", str(tmp_path / "m.txt"), str(tmp_path / "t.json")]) == 0
        out = capsys.readouterr().out
        assert "| model | 0.0 | 6 | 0.0 |" in out
        assert "model,0,6,0,0,0,0,0,0,0,0,0,0" in out

    def test_roundtrip_matches_train_report(self, tmp_path, data_dir, capsys):
        assert main(["train", "--data", str(data_dir / "dataset.csv"), "--out", str(tmp_path),
                     "--arch", "20,tanh,0,tanh,0,tanh,0,tanh,0,tanh", *FAST]) == 0
        capsys.readouterr()
        assert main(["evaluate", str(tmp_path / "model.txt"), str(data_dir / "dataset.truth.json"),
                     "--name", "PINN"]) == 0
        out = capsys.readouterr().out
        train_csv = (tmp_path / "report.csv").read_text().splitlines()[1]
        assert train_csv in out.splitlines()

    def test_corrupt_model(self, tmp_path, data_dir, capsys):
        (tmp_path / "m.txt").write_text("autopinn-model 99\n")
        assert main(["evaluate", str(tmp_path / "m.txt"), str(data_dir / "dataset.truth.json")]) == 2
        assert "version" in capsys.readouterr().err
        (tmp_path / "m.txt").write_text("garbage\n")
        assert main(["evaluate", str(tmp_path / "m.txt"), str(data_dir / "dataset.truth.json")]) == 2

    def test_missing_file(self, tmp_path, data_dir):
        assert main(["evaluate", str(tmp_path / "none.txt"), str(data_dir / "dataset.truth.json")]) == 3


class TestReport:
    def test_table_row_formats_average(self):
        row = markdown_row("M-PINN", MaeReport(np.array(M_PINN_ROW), 12350))
        assert row == ("| M-PINN | 5.0 | 12,350 | 0.8 | 13.1 | 1.2 | 4.5 | 27.9 | 0.1 | 0.3 | 0.1 | 0.1 | 1.9 |")

    def test_merge(self, tmp_path, capsys):
        from autopinn.report import csv_text
        (tmp_path / "a.csv").write_text(csv_text([("M-PINN", MaeReport(np.array(M_PINN_ROW), 12350))]))
        (tmp_path / "b.csv").write_text(csv_text([("X", MaeReport(np.ones(10), 6))]))
        assert main(["report", str(tmp_path / "a.csv"), str(tmp_path / "b.csv")]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("| Model | Average MAE | # Param | L | R_L | C |")
        assert out[2].startswith("| M-PINN | 5.0 |") and out[3].startswith("| X | 1.0 | 6 |")

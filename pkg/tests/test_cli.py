"""Command-line surface: configuration handling and small end-to-end runs."""

import json

import numpy as np
import pytest

from rydtomo import cli
from rydtomo.cli import dataset_config_from_mapping, main, parse_config_file
from rydtomo.datagen import load_dataset
from rydtomo.physics import from_mhz


def test_config_file_parsing(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "# comment line\n"
        "box_size = 15.0\n"
        "ms = 2,3   # trailing comment\n"
        "mode = rescaled\n"
        "gamma_target_mhz = 2.0\n"
        "\n")
    mapping = parse_config_file(cfg)
    assert mapping["box_size"] == "15.0"
    assert mapping["ms"] == "2,3"
    config = dataset_config_from_mapping(mapping)
    assert config.box_size == 15.0
    assert sorted(config.train_counts) == [2, 3]
    assert config.decoherence.mode == "rescaled"
    assert config.decoherence.gamma_target == pytest.approx(from_mhz(2.0))
    assert config.window == pytest.approx(0.08)


def test_config_file_rejects_junk(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("box_size 10\n")
    with pytest.raises(ValueError, match="expected"):
        parse_config_file(bad)
    bad.write_text("flux_capacitance = 11\n")
    with pytest.raises(ValueError, match="unknown configuration key"):
        parse_config_file(bad)


def test_defaults_without_any_config():
    config = dataset_config_from_mapping({})
    assert sorted(config.train_counts) == [1, 2, 3, 4]
    assert config.train_counts[1] == 1000
    assert config.test_counts[1] == 100
    assert config.box_size == 10.0
    assert config.decoherence.mode == "none"


def test_cli_overrides_beat_the_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("box_size = 15.0\nglobal_seed = 3\n")
    parser = cli.build_parser()
    args = parser.parse_args(["generate", "--config", str(cfg), "--out", "x",
                              "--set", "box_size=20.0", "--seed", "9"])
    mapping = cli._mapping_from_args(args)
    config = dataset_config_from_mapping(mapping)
    assert config.box_size == 20.0
    assert config.global_seed == 9


def test_unknown_set_key_fails_cleanly(tmp_path, capsys):
    code = main(["generate", "--out", str(tmp_path / "d"),
                 "--set", "warp_drive=1"])
    assert code == 1
    assert "unknown configuration key" in capsys.readouterr().err


def test_unknown_command_exits_with_usage_error():
    with pytest.raises(SystemExit) as exc:
        main(["teleport"])
    assert exc.value.code == 2


TINY_ARGS = ["--set", "ms=1,2", "--set", "train_per_m=6", "--set", "test_per_m=2",
             "--seed", "21", "--quiet"]


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "ds"
    assert main(["generate", "--out", str(out)] + TINY_ARGS) == 0
    return out


def test_generate_writes_a_loadable_tree(tiny_dataset, capsys):
    ds = load_dataset(tiny_dataset)
    assert len(ds.train) == 12 and len(ds.test) == 4
    # a second run into the same directory is refused
    assert main(["generate", "--out", str(tiny_dataset)] + TINY_ARGS) == 1
    assert "pass resume" in capsys.readouterr().err


def test_classifier_roundtrip_via_cli(tiny_dataset, tmp_path, capsys):
    model = tmp_path / "knn.json"
    report = tmp_path / "report.json"
    assert main(["train-classifier", "--dataset", str(tiny_dataset),
                 "--kind", "knn", "--k", "3", "--out", str(model)]) == 0
    assert model.exists()
    capsys.readouterr()
    assert main(["eval", "--model", str(model), "--dataset", str(tiny_dataset),
                 "--report", str(report)]) == 0
    seen = capsys.readouterr().out
    doc = json.loads(report.read_text())
    assert doc["target"] == "count"
    assert 0.0 <= doc["accuracy"] <= 1.0
    assert doc["n_samples"] == 4
    assert doc["model_sha256"]
    assert "accuracy" in seen


def test_regressor_roundtrip_via_cli(tiny_dataset, tmp_path, capsys):
    model = tmp_path / "pos.json"
    report = tmp_path / "report.json"
    assert main(["train-regressor", "--dataset", str(tiny_dataset),
                 "--target", "positions", "--m", "2", "--out", str(model),
                 "--epochs", "3", "--patience", "3", "--hidden", "8,4",
                 "--val-fraction", "0.2", "--quiet"]) == 0
    capsys.readouterr()
    assert main(["eval", "--model", str(model), "--dataset", str(tiny_dataset),
                 "--m", "2", "--report", str(report)]) == 0
    doc = json.loads(report.read_text())
    assert doc["target"] == "positions"
    assert doc["m"] == 2
    assert doc["baseline"]["mean"] > 0
    assert doc["mean_relative_error"] >= 0
    assert doc["ratio_to_baseline"] == pytest.approx(
        doc["mean_relative_error"] / doc["baseline"]["mean"])


def test_eval_refuses_a_missing_dataset(tmp_path, capsys):
    (tmp_path / "m.json").write_text('{"kind": "knn"}')
    code = main(["eval", "--model", str(tmp_path / "m.json"),
                 "--dataset", str(tmp_path / "nowhere")])
    assert code == 1
    assert capsys.readouterr().err.startswith("error:")


def test_baseline_command_prints_json(capsys):
    assert main(["baseline", "--m", "2", "--n-pairs", "50", "--seed", "4"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["m"] == 2 and doc["n_pairs"] == 50
    assert 0.2 < doc["mean"] < 1.5


def test_trace_command_prints_a_table(capsys):
    assert main(["trace", "--m", "2", "--times", "0,0.01",
                 "--set", "mode=none"]) == 0
    out = capsys.readouterr().out
    lines = [l for l in out.splitlines() if l.strip()]
    assert lines[0].startswith("m=2")
    assert "input" in lines[1] and "out2" in lines[1]
    assert len(lines) == 4


def test_pipeline_smoke(tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["pipeline", "--out", str(run), "--quiet",
                 "--set", "ms=1,2", "--set", "train_per_m=8",
                 "--set", "test_per_m=2", "--seed", "31",
                 "--epochs", "3", "--patience", "3"]) == 0
    out = capsys.readouterr().out
    summary = json.loads((run / "reports" / "summary.json").read_text())
    assert (run / "dataset" / "manifest.json").exists()
    kinds = set(summary["models"])
    assert {"knn", "svm", "rf"} <= kinds
    assert "positions_m1" in kinds and "positions_m2" in kinds
    for name, digest in summary["models"].items():
        path = run / "models" / f"{name}.json"
        assert path.exists()
        assert len(digest) == 64
        assert name in summary["reports"]
    # closed-system data means no coupling regressors
    assert not any(k.startswith("operators") for k in kinds)
    assert "nan" not in out
    assert "mean abs err" in out  # the single-atom report is absolute

"""
Command-line surface: exit codes and end-to-end runs
"""

import json

import pytest

from attnlab.main import run
from attnlab.models.config import VariantTag

from conftest import tiny_config

TEXT = b"sphinx of black quartz, judge my vow. " * 30


def test_help_exits_cleanly(capsys):
    assert run(["--help"]) == 0
    assert "COMMAND" in capsys.readouterr().out


def test_usage_errors_exit_one(capsys):
    assert run(["cost", "--variant", "standard", "--L", "2", "--d", "4", "--bogus"]) == 1
    assert run(["cost", "--variant", "sparse", "--L", "2", "--d", "4"]) == 1
    assert run([]) == 1
    assert "error:" in capsys.readouterr().err


def test_maps_prints_layer_ids(capsys):
    assert run(["maps", "--name", "even", "--layers", "6"]) == 0
    assert capsys.readouterr().out.strip() == "{2,4,6}"


def test_cost_single_point_prints_value(capsys):
    assert run(["cost", "--variant", "standard", "--metric", "flops", "--stage", "prefill",
                "--B", "1", "--L", "2", "--d", "4"]) == 0
    assert capsys.readouterr().out.strip() == "256"


def test_cost_grid_prints_csv(capsys):
    assert run(["cost", "--variant", "standard,mlp", "--metric", "cache_size", "--L", "8", "--d", "16"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("variant,metric,stage")
    assert len(lines) == 3


def test_equiv_passes(capsys, tmp_path):
    out = tmp_path / "equiv.jsonl"
    assert run(["equiv", "--variant", "nonapprox", "--L", "1,4", "--out", str(out)]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert len(printed) == 2 and all(line.endswith("pass") for line in printed)
    assert len(out.read_text().splitlines()) == 2


def test_missing_checkpoint_exits_one(tmp_path, capsys):
    assert run(["eval", "--checkpoint", str(tmp_path / "none.datn")]) == 1
    assert "error:" in capsys.readouterr().err


@pytest.fixture
def workspace(tmp_path):
    corpus = tmp_path / "corpus.txt"
    corpus.write_bytes(TEXT)
    model = tiny_config([VariantTag.STANDARD, VariantTag.MLP]).model_dump(mode="json")
    config = tmp_path / "run.json"
    config.write_text(json.dumps({
        "model": model,
        "train": {"corpus_path": str(corpus), "batch_size": 2, "seq_len": 8, "eval_every": 0},
    }))
    return tmp_path, corpus, config


def test_train_eval_diagnose_flow(workspace, capsys):
    root, corpus, config = workspace
    run_dir = root / "run"
    assert run(["train", "--config", str(config), "--steps", "3", "--seed", "1", "--out", str(run_dir)]) == 0
    out = capsys.readouterr().out
    assert "steps: 3" in out
    checkpoint = run_dir / "checkpoint.datn"
    assert checkpoint.is_file()

    ppl = root / "ppl.jsonl"
    assert run(["eval", "--checkpoint", str(checkpoint), "--data", str(corpus),
                "--context-lengths", "4,8", "--out", str(ppl)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [line.split(":")[0] for line in lines] == ["context 4", "context 8"]
    assert len(ppl.read_text().splitlines()) == 2

    diag = root / "diag"
    assert run(["diagnose", "--checkpoint", str(checkpoint), "--eval-file", str(corpus),
                "--seq-len", "8", "--batch-size", "2", "--csv", "--out", str(diag)]) == 0
    assert "indicator records: 2" in capsys.readouterr().out
    assert (diag / "indicators.csv").is_file()
    assert (diag / "prelogits.jsonl").is_file()


def test_eval_rejects_mismatched_config(workspace, tmp_path):
    root, _, config = workspace
    assert run(["train", "--config", str(config), "--steps", "0", "--out", str(root / "run")]) == 0
    other = root / "other.json"
    data = json.loads(config.read_text())
    data["model"]["d_ff"] = 32
    other.write_text(json.dumps(data))
    assert run(["eval", "--checkpoint", str(root / "run" / "checkpoint.datn"), "--config", str(other)]) == 1


@pytest.mark.parametrize("command", ["train", "eval", "diagnose", "cost", "equiv", "maps"])
def test_every_subcommand_takes_config_and_seed(command, capsys):
    assert run([command, "--help"]) == 0
    text = capsys.readouterr().out
    assert "--config" in text and "--seed" in text


def echoed(log_file):
    text = log_file.read_text()
    assert "Resolved config" in text
    return text


def test_maps_reads_layer_count_from_config(workspace, capsys):
    root, _, config = workspace
    log_file = root / "maps.log"
    assert run(["--log-file", str(log_file), "maps", "--name", "even", "--config", str(config), "--seed", "3"]) == 0
    assert capsys.readouterr().out.strip() == "{2}"
    assert '"seed": 3' in echoed(log_file)


def test_cost_takes_sizes_from_config(workspace, capsys):
    root, _, config = workspace
    log_file = root / "cost.log"
    assert run(["--log-file", str(log_file), "cost", "--config", str(config), "--metric", "cache_size"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert sorted(line.split(",")[0] for line in lines[1:]) == ["mlp", "standard"]
    assert all(line.split(",")[4:7] == ["12", "8", "2"] for line in lines[1:])
    echoed(log_file)


def test_cost_without_config_needs_sizes(capsys):
    assert run(["cost", "--variant", "standard", "--L", "8"]) == 1
    assert "--d" in capsys.readouterr().err


def test_equiv_takes_heads_and_seed_from_config(workspace, capsys):
    root, _, config = workspace
    log_file = root / "equiv.log"
    assert run(["--log-file", str(log_file), "equiv", "--config", str(config), "--L", "4", "--seed", "5"]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert [line.split(" ")[0] for line in printed] == ["approx/split", "nonapprox"]
    assert all("d_head=4 f64" in line for line in printed)
    assert '"seed": 5' in echoed(log_file)


def test_eval_echoes_checkpoint_config(workspace, capsys):
    root, corpus, config = workspace
    assert run(["train", "--config", str(config), "--steps", "0", "--out", str(root / "run")]) == 0
    log_file = root / "eval.log"
    assert run(["--log-file", str(log_file), "eval", "--checkpoint", str(root / "run" / "checkpoint.datn"),
                "--data", str(corpus), "--context-lengths", "8", "--seed", "9"]) == 0
    text = echoed(log_file)
    assert '"seed": 9' in text and '"max_seq_len": 12' in text

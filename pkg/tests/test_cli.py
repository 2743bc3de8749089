import json
import shutil
import subprocess
import sys

import pytest

from stqa.cli import main
from stqa.io import Checkpoint
from stqa.trainer import read_metrics

TINY_TEXT = ["--set", "embed_dim=4", "--set", "max_epochs=2"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "ds"
    assert main(["synth", str(root), "--questions", "40", "--frames", "4", "--size", "8", "--seed", "1"]) == 0
    return root


def test_gradcheck_se_block_seed_7(capsys):
    assert main(["gradcheck", "--target", "se_block", "--seed", "7"]) == 0
    line = capsys.readouterr().out.strip()
    name, err, tol, verdict = line.split("\t")
    assert name == "se_block" and verdict == "ok"
    assert float(err.split("=")[1]) <= 1e-4


def test_unknown_flag_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["eval", "--bogus"])
    assert info.value.code == 2
    assert "usage:" in capsys.readouterr().err


def test_missing_required_argument_is_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["train", "--channel", "text"])
    assert info.value.code == 2


def test_module_entry_point_exit_codes(tmp_path):
    run = lambda *a: subprocess.run([sys.executable, "-m", "stqa", *a], capture_output=True, text=True)  # noqa: E731
    assert run("--bogus").returncode == 2
    assert run("inspect", str(tmp_path / "missing.ckpt")).returncode == 1


def test_synth_is_deterministic(data_dir, tmp_path):
    other = tmp_path / "again"
    assert main(["synth", str(other), "--questions", "40", "--frames", "4", "--size", "8", "--seed", "1"]) == 0
    assert (other / "manifest").read_bytes() == (data_dir / "manifest").read_bytes()


def test_synth_invalid_config_exits_1(tmp_path):
    assert main(["synth", str(tmp_path / "x"), "--frames", "1"]) == 1


def test_text_train_and_eval_without_visual_files(data_dir, tmp_path, capsys):
    text_only = tmp_path / "textonly"
    shutil.copytree(data_dir, text_only)
    shutil.rmtree(text_only / "clips")
    ckpt, metrics, report = tmp_path / "t.ckpt", tmp_path / "m.tsv", tmp_path / "r.json"
    assert main(["train", "--channel", "text", "--data", str(text_only), "--out", str(ckpt),
                 "--metrics", str(metrics), *TINY_TEXT]) == 0
    assert Checkpoint.load(ckpt).channel == "text"
    assert len(read_metrics(metrics)) >= 1
    assert main(["eval", "--data", str(text_only), "--checkpoints", str(ckpt), "--report", str(report)]) == 0
    rep = json.loads(report.read_text())
    assert rep["channels"] == ["text"] and rep["split"] == "test" and 0 <= rep["accuracy"] <= 1
    assert "accuracy" in capsys.readouterr().out


def test_visual_train_needs_clips(data_dir, tmp_path):
    text_only = tmp_path / "noclips"
    shutil.copytree(data_dir, text_only)
    shutil.rmtree(text_only / "clips")
    assert main(["train", "--channel", "rgb", "--data", str(text_only), "--out", str(tmp_path / "r.ckpt")]) == 1


def test_eval_candidate_mismatch_exits_1(data_dir, tmp_path, capsys):
    ckpt = tmp_path / "t.ckpt"
    assert main(["train", "--channel", "text", "--data", str(data_dir), "--out", str(ckpt), *TINY_TEXT]) == 0
    k4 = tmp_path / "k4"
    assert main(["synth", str(k4), "--questions", "10", "--frames", "3", "--size", "8", "--candidates", "4"]) == 0
    capsys.readouterr()
    assert main(["eval", "--data", str(k4), "--checkpoints", str(ckpt)]) == 1
    assert "candidates" in capsys.readouterr().err


def test_bad_override_exits_1(data_dir, tmp_path):
    assert main(["train", "--channel", "text", "--data", str(data_dir), "--out", str(tmp_path / "x"),
                 "--set", "no_such_param=1"]) == 1


def test_config_file_and_overrides(data_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"embed_dim": 3, "max_epochs": 1}))
    ckpt = tmp_path / "c.ckpt"
    assert main(["train", "--channel", "text", "--data", str(data_dir), "--out", str(ckpt),
                 "--config", str(cfg), "--set", "hidden_dim=5"]) == 0
    params = Checkpoint.load(ckpt).config["params"]
    assert params["embed_dim"] == 3 and params["hidden_dim"] == 5 and params["max_epochs"] == 1


def test_dump_and_merge_round_trip(data_dir, tmp_path):
    ckpt, dumps = tmp_path / "t.ckpt", tmp_path / "dumps"
    assert main(["train", "--channel", "text", "--data", str(data_dir), "--out", str(ckpt), *TINY_TEXT]) == 0
    assert main(["eval", "--data", str(data_dir), "--checkpoints", str(ckpt), "--report", str(tmp_path / "a.json"),
                 "--dump-scores", str(dumps)]) == 0
    assert (dumps / "text.json").is_file()
    assert main(["eval", "--data", str(data_dir), "--from-dumps", str(dumps / "text.json"),
                 "--report", str(tmp_path / "b.json")]) == 0
    assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()


def test_inspect(data_dir, tmp_path, capsys):
    ckpt = tmp_path / "t.ckpt"
    assert main(["train", "--channel", "text", "--data", str(data_dir), "--out", str(ckpt), *TINY_TEXT]) == 0
    capsys.readouterr()
    assert main(["inspect", str(ckpt)]) == 0
    out = capsys.readouterr().out
    assert "embed.table" in out and "parameters" in out


def test_inspect_corrupt_checkpoint_exits_1(tmp_path, capsys):
    (tmp_path / "bad.ckpt").write_bytes(b"garbage")
    assert main(["inspect", str(tmp_path / "bad.ckpt")]) == 1
    assert "bad magic" in capsys.readouterr().err

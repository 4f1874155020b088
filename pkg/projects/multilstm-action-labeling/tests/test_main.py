"""End-to-end tests of the command-line interface."""

from pathlib import Path

import pandas as pd
import pytest

from src.checkpoint import load_checkpoint
from src.config import RESOLVED_CONFIG_NAME
from src.errors import ConfigurationError, DivergenceError, GradientCheckError
from src.main import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, exit_code, run

MODEL_FLAGS = ["--hidden", "4", "--attention-units", "3", "--window", "3"]


@pytest.fixture
def workspace(tmp_path, monkeypatch, spec_factory):
    """A working directory holding a small synthetic dataset under ``data/``."""
    monkeypatch.chdir(tmp_path)
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(spec_factory().model_dump_json(), encoding="utf-8")
    code = run(["synth", "--spec", str(spec_path), "--seed", "3", "--out", "data"])
    assert code == EXIT_OK
    return tmp_path


def _tree(root: Path) -> dict:
    return {
        str(p.relative_to(root)): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def _train(out: str, *extra: str) -> int:
    return run(
        ["train", "--data", "data/train", "--out", out, "--epochs", "1"]
        + MODEL_FLAGS
        + list(extra)
    )


@pytest.mark.parametrize(
    "argv",
    [[], ["nope"], ["train", "--bogus"], ["train", "--epochs", "many"]],
)
def test_usage_errors(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(argv) == EXIT_USAGE


def test_exit_codes():
    assert exit_code(DivergenceError(1, 4, float("nan"))) == EXIT_NUMERIC
    assert exit_code(GradientCheckError("bad")) == EXIT_NUMERIC
    assert exit_code(ConfigurationError("bad")) == EXIT_DATA
    assert exit_code(FileNotFoundError("gone")) == EXIT_DATA


def test_gradcheck(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(["gradcheck", "--seed", "7", "--out", "g"]) == EXIT_OK
    table = pd.read_csv(tmp_path / "g" / "gradcheck.csv")
    assert table["passed"].all()
    assert (tmp_path / "g" / RESOLVED_CONFIG_NAME).is_file()


def test_gradcheck_defaults_to_seed_seven(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("MULTILSTM_SEED", raising=False)
    assert run(["gradcheck", "--out", "bare"]) == EXIT_OK
    assert run(["gradcheck", "--seed", "7", "--out", "seeded"]) == EXIT_OK
    resolved = (tmp_path / "bare" / RESOLVED_CONFIG_NAME).read_text(encoding="utf-8")
    assert "SEED=7\n" in resolved
    bare = (tmp_path / "bare" / "gradcheck.csv").read_bytes()
    assert bare == (tmp_path / "seeded" / "gradcheck.csv").read_bytes()


def test_synth_is_deterministic(workspace):
    spec = str(workspace / "spec.json")
    assert run(["synth", "--spec", spec, "--seed", "3", "--out", "again"]) == EXIT_OK
    first = _tree(workspace / "data")
    assert first
    assert _tree(workspace / "again") == first
    assert (workspace / "data" / "synth_spec.json").is_file()


def test_missing_data_flag(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(["stats", "--out", "s"]) == EXIT_DATA
    assert run(["eval", "--oracle", "--data", "absent", "--out", "e"]) == EXIT_DATA


def test_bad_config_file(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(["gradcheck", "--config", "missing.env"]) == EXIT_DATA
    (tmp_path / "bad.env").write_text("NOT_A_KEY=1\n", encoding="utf-8")
    assert run(["gradcheck", "--config", "bad.env"]) == EXIT_DATA


def test_stats(workspace):
    assert run(["stats", "--data", "data/train", "--out", "s"]) == EXIT_OK
    assert (workspace / "s" / "summary.csv").is_file()
    pmi = pd.read_csv(workspace / "s" / "cooccurrence_pmi.csv")
    assert list(pmi.columns) == ["class", "a", "b", "c", "d"]


def test_oracle_eval_and_detect(workspace):
    assert run(["eval", "--oracle", "--data", "data/test", "--out", "e"]) == EXIT_OK
    summary = pd.read_csv(workspace / "e" / "map.csv")
    assert summary["map"].iloc[0] == 1.0

    argv = ["detect", "--oracle", "--data", "data/test", "--train-data", "data/train"]
    assert run(argv + ["--out", "d"]) == EXIT_OK
    detection = pd.read_csv(workspace / "d" / "detection_map.csv")
    assert detection["map"].iloc[0] == 1.0
    assert (workspace / "d" / "detections.csv").is_file()


def test_detect_needs_training_data(workspace):
    argv = ["detect", "--oracle", "--data", "data/test", "--out", "d"]
    assert run(argv) == EXIT_DATA


def test_train_then_eval(workspace):
    assert _train("t") == EXIT_OK
    checkpoint = workspace / "t" / "model.ckpt"
    assert checkpoint.is_file()
    losses = pd.read_csv(workspace / "t" / "losses.csv")
    assert list(losses["epoch"]) == [0, 1]

    argv = ["eval", "--data", "data/test", "--checkpoint", str(checkpoint)]
    assert run(argv + ["--out", "e"]) == EXIT_OK
    value = pd.read_csv(workspace / "e" / "map.csv")["map"].iloc[0]
    assert 0.0 <= value <= 1.0


def test_resolved_config_reproduces_the_checkpoint(workspace):
    assert _train("t", "--seed", "5") == EXIT_OK
    config = str(workspace / "t" / RESOLVED_CONFIG_NAME)
    assert run(["train", "--config", config, "--out", "t2"]) == EXIT_OK
    first = (workspace / "t" / "model.ckpt").read_bytes()
    assert (workspace / "t2" / "model.ckpt").read_bytes() == first


def test_sweep_offsets(workspace):
    for offset in (0, 2):
        target = f"ck/offset_{offset}.ckpt"
        assert _train("t", "--offset", str(offset), "--checkpoint", target) == EXIT_OK
    argv = [
        "sweep-offsets",
        "--data",
        "data/test",
        "--train-data",
        "data/train",
        "--checkpoint-dir",
        "ck",
        "--offsets",
        "0,2",
        "--out",
        "sw",
    ]
    assert run(argv) == EXIT_OK
    table = pd.read_csv(workspace / "sw" / "offset_sweep.csv")
    assert list(table["offset_frames"]) == [0, 2]

    argv[argv.index("0,2")] = "0,7"
    assert run(argv) == EXIT_DATA


def test_retrieve(workspace):
    base = ["retrieve", "--oracle", "--data", "data/test", "--first", "a"]
    assert run(base + ["--second", "b", "--max-gap", "5", "--out", "r"]) == EXIT_OK
    hits = pd.read_csv(workspace / "r" / "retrieval.csv")
    assert list(hits.columns) == ["video_id", "t_first", "t_second", "score"]
    assert hits["score"].iloc[0] == 1.0

    argv = base + ["--second", "c", "--mode", "cooccurring", "--out", "r2"]
    assert run(argv) == EXIT_OK
    assert run(base + ["--second", "zebra", "--out", "r3"]) == EXIT_DATA


def test_benchmark(workspace):
    argv = [
        "benchmark",
        "--spec",
        str(workspace / "spec.json"),
        "--hidden",
        "3",
        "--attention-units",
        "2",
        "--window",
        "2",
        "--epochs",
        "1",
        "--out",
        "b",
    ]
    assert run(argv) == EXIT_OK
    table = pd.read_csv(workspace / "b" / "benchmark.csv")
    assert list(table["variant"]) == ["frame", "lstm", "multilstm"]
    assert (workspace / "b" / "benchmark_settings.json").is_file()


def test_no_shuffle_reaches_the_checkpoint(workspace):
    assert _train("t", "--no-shuffle") == EXIT_OK
    resolved = (workspace / "t" / RESOLVED_CONFIG_NAME).read_text(encoding="utf-8")
    assert "SHUFFLE=false\n" in resolved
    checkpoint = load_checkpoint(workspace / "t" / "model.ckpt")
    assert checkpoint.train_config.shuffle is False

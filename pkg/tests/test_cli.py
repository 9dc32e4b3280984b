"""Command line: config precedence, exit codes and a small end-to-end run."""

import json

import pytest

from gemcap.cli import (
    ACCEPTANCE,
    OK,
    RUNTIME,
    USAGE,
    RunConfig,
    build_parser,
    dispatch,
    preset_overrides,
    resolve_config,
)
from gemcap.dataforge import read_manifest
from gemcap.error_handler import ConfigError
from gemcap.lexicon import default_lexicon

SMALL_DATA = ["--n", "28", "--multiplier", "0", "--size", "32", "--seed", "4"]
SMALL_MODEL = [
    "--size",
    "32",
    "--encoder-scale",
    "vgg-small",
    "--hidden",
    "8",
    "--batch",
    "4",
    "--max-epochs",
    "1",
]


@pytest.fixture
def run_dir(tmp_path):
    assert dispatch(["gen-data", "--out", str(tmp_path)] + SMALL_DATA) == OK
    return tmp_path


class TestRunConfig:
    def test_precedence(self, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"model": {"hidden": 32}, "train": {"batch": 4}}))
        args = build_parser().parse_args(
            ["train", "--preset", "desk-classification", "--config", str(config), "--hidden", "64"]
        )
        cfg = resolve_config(args)
        assert cfg.model.hidden == 64
        assert cfg.train.batch == 4
        assert cfg.model.encoder_scale == "vgg-desk"
        assert cfg.model.blocks == (16, 32, 64)

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            RunConfig().merged({"model": {"depth": 3}})
        with pytest.raises(ConfigError):
            RunConfig().merged({"optimiser": {}})

    def test_captioning_defaults_to_basic(self):
        cfg = RunConfig().merged({"train": {"task": "captioning"}}).validate()
        assert cfg.train.level == "basic"

    def test_paper_axes(self):
        cfg = RunConfig().merged({"model": {"hidden": 100}})
        cfg.validate()
        with pytest.raises(ValueError):
            RunConfig().merged({"model": {"hidden": 100}}).validate(paper=True)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset_overrides("huge")


class TestExitCodes:
    def test_no_command(self):
        assert dispatch([]) == USAGE

    def test_unknown_command(self):
        assert dispatch(["bogus"]) == USAGE

    def test_bad_flag_value(self):
        assert dispatch(["train", "--batch", "many"]) == USAGE

    def test_validation_failure(self, tmp_path):
        assert dispatch(["gen-data", "--out", str(tmp_path), "--n", "2"]) == USAGE

    def test_unknown_config_key_is_runtime(self, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"model": {"depth": 3}}))
        assert dispatch(["gen-data", "--out", str(tmp_path), "--config", str(config)]) == RUNTIME

    def test_missing_checkpoint(self, run_dir):
        assert dispatch(["eval", "--out", str(run_dir)]) == RUNTIME


class TestCommands:
    def test_gen_data_is_deterministic(self, tmp_path, capsys):
        for name in ("a", "b"):
            assert dispatch(["gen-data", "--out", str(tmp_path / name)] + SMALL_DATA) == OK
        first = (tmp_path / "a" / "manifest.jsonl").read_bytes()
        assert first == (tmp_path / "b" / "manifest.jsonl").read_bytes()
        assert "wrote 28 samples" in capsys.readouterr().out
        sample = read_manifest(tmp_path / "a" / "manifest.jsonl").samples[0]
        assert (tmp_path / "a" / sample.path).is_file()

    def test_dump_lexicon(self, capsys):
        assert dispatch(["dump-lexicon"]) == OK
        entries = json.loads(capsys.readouterr().out)
        assert len(entries) == len(default_lexicon())

    def test_augment_preview(self, tmp_path, capsys):
        assert dispatch(["augment-preview", "--out", str(tmp_path), "--size", "32"]) == OK
        assert (tmp_path / "preview" / "original.png").is_file()
        ops = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        assert len(list((tmp_path / "preview").glob("*.png"))) == len(ops) + 1

    def test_grid_dry_run(self, tmp_path, capsys):
        assert dispatch(["grid", "--dry-run", "--paper-grid", "--out", str(tmp_path)]) == OK
        assert capsys.readouterr().out.strip() == "400 grid points"

    def test_grid_dry_run_json(self, tmp_path, capsys):
        argv = ["grid", "--dry-run", "--out", str(tmp_path), "--cell", "gru", "--cell", "lstm"]
        assert dispatch(argv + ["--neurons", "64", "128", "--format", "json"]) == OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["count"] == 4
        assert payload["points"][0]["cell"] == "gru"

    def test_paper_grid_rejects_off_axis_config(self, tmp_path):
        config = tmp_path / "run.json"
        config.write_text(json.dumps({"model": {"hidden": 100}}))
        argv = ["grid", "--dry-run", "--paper-grid", "--out", str(tmp_path), "--config"]
        assert dispatch(argv + [str(config)]) == USAGE

    def test_grad_check(self, capsys):
        assert dispatch(["grad-check", "--probes", "10", "--format", "json"]) == OK
        payload = json.loads(capsys.readouterr().out)
        assert all(report["passed"] for report in payload.values())

    def test_train_then_eval(self, run_dir, capsys):
        out = str(run_dir)
        assert dispatch(["train", "--out", out] + SMALL_MODEL) == OK
        assert (run_dir / "checkpoints" / "classification.ckpt").is_file()
        assert len((run_dir / "log.jsonl").read_text().splitlines()) == 1
        capsys.readouterr()
        assert dispatch(["eval", "--out", out, "--format", "json"]) == OK
        report = json.loads(capsys.readouterr().out)
        assert 0.0 <= report["ccr"] <= 1.0
        assert (run_dir / "report.txt").is_file()
        assert dispatch(["eval", "--out", out, "--min-score", "1.01"]) == ACCEPTANCE

    def test_train_then_caption(self, run_dir, capsys):
        out = str(run_dir)
        argv = ["train", "--out", out, "--task", "captioning", "--level", "normal"]
        assert dispatch(argv + SMALL_MODEL) == OK
        assert (run_dir / "checkpoints" / "captioning-normal.ckpt").is_file()
        image = run_dir / read_manifest(run_dir / "manifest.jsonl").samples[0].path
        capsys.readouterr()
        argv = ["caption", str(image), "--out", out, "--level", "normal", "--retries", "2"]
        code = dispatch(argv)
        captured = capsys.readouterr()
        assert code in (OK, RUNTIME)
        if code == RUNTIME:
            assert "invalid at normal level after 3 attempt(s)" in captured.err
        else:
            assert captured.out.strip().endswith(".")

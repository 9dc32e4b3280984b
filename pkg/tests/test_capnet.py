"""Captioner assembly, gradients, decoding, training, checkpoints and grids."""

import json
import math

import numpy as np
import pytest

from gemcap import capnet
from gemcap.capnet import (
    CAPTIONING,
    CLASSIFICATION,
    MAGIC,
    DecoderConfig,
    EncoderConfig,
    GridSpec,
    TrainConfig,
    build_model,
    caption_image,
    checkpoint_bytes,
    checkpoint_from_bytes,
    encode_image,
    encode_sequences,
    evaluate_captioner,
    evaluate_classifier,
    gradient_suite,
    greedy_decode,
    init_decoder_state,
    decode_step,
    load_checkpoint,
    predict_class,
    run_grid,
    save_checkpoint,
    sequence_loss,
    train,
)
from gemcap.config import PRESETS
from gemcap.dataforge import CLASSES, TEST, build_dataset, split_dataset
from gemcap.error_handler import (
    CheckpointCorrupt,
    CheckpointFormatError,
    ConfigError,
    DatasetError,
    ShapeMismatch,
    TaskMismatch,
    TrainingDiverged,
)
from gemcap.evalkit import JSON, render_metrics
from gemcap.lexicon import build_vocab, tokenize
from gemcap.optim import OptimizerConfig

SIZE = 32
ENCODER = EncoderConfig(height=SIZE, width=SIZE, blocks=(4, 8), feature_dim=8)
SPLIT = (0.5, 0.25, 0.25)


@pytest.fixture(scope="module")
def manifest():
    return split_dataset(build_dataset(16, 0, master_seed=3, size=SIZE), SPLIT, master_seed=3)


@pytest.fixture(scope="module")
def caption_vocab(manifest):
    return build_vocab([s.caption("normal") for s in manifest])


def _classifier(cell="gru", seed=0):
    return build_model(
        ENCODER, DecoderConfig(cell=cell, hidden=8, embed_dim=4), build_vocab(CLASSES), seed=seed
    )


def _captioner(vocab, cell="gru", seed=0, max_len=12):
    decoder = DecoderConfig(cell=cell, hidden=8, embed_dim=4, max_len=max_len)
    return build_model(ENCODER, decoder, vocab, CAPTIONING, "normal", seed=seed)


def _force_token(model, token_id):
    head = model.params["decoder.head"]
    head["W"].value[...] = 0.0
    head["b"].value[...] = 0.0
    head["b"].value[token_id] = 20.0


class TestConfigs:
    def test_indivisible_input(self):
        with pytest.raises(ConfigError):
            EncoderConfig(height=30, width=32, blocks=(4, 8))

    def test_flat_dim(self):
        assert ENCODER.flat_dim == 8 * 8 * 8

    def test_scaled(self):
        assert EncoderConfig.scaled("vgg-small", size=32).blocks == (8, 16, 32)
        with pytest.raises(ConfigError):
            EncoderConfig.scaled("resnet")

    def test_unknown_cell(self):
        with pytest.raises(ConfigError):
            DecoderConfig(cell="rnn")

    def test_train_config_levels(self):
        assert TrainConfig(task=CLASSIFICATION, level="complete").level is None
        assert TrainConfig(task=CAPTIONING).level == "basic"
        with pytest.raises(ConfigError):
            TrainConfig(task="segmentation")


class TestModel:
    def test_same_seed_same_params(self):
        a, b = _classifier(seed=4), _classifier(seed=4)
        for (na, pa), (nb, pb) in zip(a.named_params(), b.named_params()):
            assert na == nb
            np.testing.assert_array_equal(pa.value, pb.value)

    def test_component_order(self):
        names = list(_classifier(cell="lstm").params)
        assert names == [
            "encoder.block0",
            "encoder.block1",
            "encoder.proj",
            "decoder.init",
            "decoder.init_c",
            "decoder.embed",
            "decoder.cell",
            "decoder.head",
        ]

    def test_feature_and_state_shapes(self, manifest):
        model = _captioner(build_vocab(["Ring in silver."]), cell="lstm")
        feats = encode_image(manifest.samples[0].image, model)
        assert feats.shape == (8,)
        h0, c0 = init_decoder_state(feats, model)
        assert h0.shape == c0.shape == (8,)
        logits, (h1, c1) = decode_step(model.vocab.start_id, (h0, c0), model)
        assert logits.shape == (len(model.vocab),)
        assert h1.shape == (8,)

    def test_encode_rejects_wrong_size(self):
        with pytest.raises(ShapeMismatch):
            encode_image(np.zeros((3, 16, 16)), _classifier())

    @pytest.mark.parametrize("cell", ["gru", "lstm"])
    def test_fresh_loss_is_near_uniform(self, manifest, caption_vocab, cell):
        model = _captioner(caption_vocab, cell=cell, max_len=32)
        samples = manifest.samples[:4]
        tokens = [tokenize(s.caption("normal")) for s in samples]
        inputs, targets, mask = encode_sequences(tokens, caption_vocab, 32)
        images = np.stack([s.image for s in samples])
        loss = sequence_loss(model, images, inputs, targets, mask, backward=False)
        assert abs(loss - math.log(len(caption_vocab))) <= 0.05 * math.log(len(caption_vocab))


class TestSequences:
    def test_encode_sequences(self):
        vocab = build_vocab(["ring in silver ."])
        inputs, targets, mask = encode_sequences([["ring", "in"], ["ring"]], vocab, 8)
        ring, in_ = vocab.id("ring"), vocab.id("in")
        assert inputs.tolist() == [[1, ring, in_], [1, ring, 0]]
        assert targets.tolist() == [[ring, in_, 2], [ring, 2, 0]]
        assert mask.tolist() == [[1.0, 1.0, 1.0], [1.0, 1.0, 0.0]]

    def test_truncation_keeps_end_token(self):
        vocab = build_vocab(["a b c d"])
        _, targets, mask = encode_sequences([["a", "b", "c", "d"]], vocab, 3)
        assert targets.shape == (1, 3)
        assert targets[0, -1] == vocab.end_id
        assert mask.sum() == 3


class TestGradients:
    def test_suite_passes(self):
        reports = gradient_suite(seed=0, probes=100)
        for name in ("decoder_init_gru", "captioner_gru", "decoder_init_lstm", "captioner_lstm"):
            assert name in reports
        failed = {name: r.worst for name, r in reports.items() if not r.passed}
        assert not failed
        assert max(r.max_rel_err for r in reports.values()) <= 1e-4

    @pytest.mark.parametrize("seed", [1, 2, 3, 4])
    def test_captioner_checks_hold_across_seeds(self, seed):
        reports = gradient_suite(seed=seed, probes=50)
        for cell in ("gru", "lstm"):
            report = reports[f"captioner_{cell}"]
            assert report.passed, report.worst


class TestInference:
    def test_end_first_gives_empty_caption(self, manifest, caption_vocab):
        model = _captioner(caption_vocab)
        _force_token(model, caption_vocab.end_id)
        assert greedy_decode(manifest.samples[0].image, model) == []

    def test_decoding_stops_at_max_len(self, manifest, caption_vocab):
        model = _captioner(caption_vocab, max_len=5)
        token = caption_vocab.tokens[-1]
        _force_token(model, caption_vocab.id(token))
        assert greedy_decode(manifest.samples[0].image, model) == [token] * 5

    def test_predict_class_restricted_to_classes(self, manifest):
        model = _classifier()
        _force_token(model, model.vocab.end_id)
        model.params["decoder.head"]["b"].value[model.vocab.id("bracelet")] = 5.0
        assert predict_class(manifest.samples[0].image, model) == "bracelet"

    def test_task_mismatch(self, manifest, caption_vocab):
        image = manifest.samples[0].image
        with pytest.raises(TaskMismatch):
            predict_class(image, _captioner(caption_vocab))
        with pytest.raises(TaskMismatch):
            caption_image(image, _classifier())

    def test_retries_are_counted(self, manifest, caption_vocab):
        model = _captioner(caption_vocab, max_len=4)
        _force_token(model, caption_vocab.id("."))
        result = caption_image(manifest.samples[0].image, model, retries=3, seed=1)
        assert result.attempts == 4
        assert not result.verdict
        assert result.caption.count(".") == 4

    def test_empty_caption_uses_every_retry(self, manifest, caption_vocab):
        model = _captioner(caption_vocab, max_len=4)
        _force_token(model, caption_vocab.end_id)
        result = caption_image(manifest.samples[0].image, model, retries=5)
        assert result.attempts == 6
        assert result.verdict.reason == "empty caption"


class TestCheckpoint:
    @pytest.mark.parametrize("cell", ["gru", "lstm"])
    def test_bit_identical_round_trip(self, tmp_path, caption_vocab, cell):
        model = _captioner(caption_vocab, cell=cell, seed=9)
        model.meta = {"best_epoch": 3, "best_val_loss": 0.25}
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        loaded = load_checkpoint(path)
        assert checkpoint_bytes(loaded) == path.read_bytes()
        assert loaded.vocab == model.vocab
        assert loaded.task == CAPTIONING and loaded.level == "normal"
        assert loaded.meta == model.meta
        for (_, a), (_, b) in zip(model.named_params(), loaded.named_params()):
            np.testing.assert_array_equal(a.value, b.value)

    def test_bad_magic(self):
        with pytest.raises(CheckpointFormatError):
            checkpoint_from_bytes(b"NOTACKPT" + bytes(32))

    def test_bad_version(self):
        data = bytearray(checkpoint_bytes(_classifier()))
        data[len(MAGIC)] = 99
        with pytest.raises(CheckpointFormatError):
            checkpoint_from_bytes(bytes(data))

    @pytest.mark.parametrize("cut", [10, 40, -8])
    def test_truncated(self, cut):
        data = checkpoint_bytes(_classifier())
        with pytest.raises(CheckpointCorrupt):
            checkpoint_from_bytes(data[:cut])

    def test_trailing_bytes(self):
        with pytest.raises(CheckpointCorrupt):
            checkpoint_from_bytes(checkpoint_bytes(_classifier()) + b"\x00" * 8)


def _frozen_step(self, params):
    for _, param in params:
        param.grad.fill(0.0)


class TestTrain:
    def test_early_stop_on_flat_validation_loss(self, monkeypatch, manifest, tmp_path):
        monkeypatch.setattr(capnet.Optimizer, "step", _frozen_step)
        cfg = TrainConfig(task=CLASSIFICATION, batch_size=4, max_epochs=20, patience=2)
        log_path = tmp_path / "log.jsonl"
        result = train(manifest, ENCODER, DecoderConfig(hidden=8, embed_dim=4), cfg, None, log_path)
        assert result.stopped_early
        assert result.epochs_run == 3
        assert result.best_epoch == 1
        lines = [json.loads(line) for line in log_path.read_text().splitlines()]
        assert [r["epoch"] for r in lines] == [1, 2, 3]
        assert set(lines[0]) == {"epoch", "train_loss", "val_loss", "val_ccr"}

    def test_loss_decreases(self, manifest):
        cfg = TrainConfig(
            task=CLASSIFICATION,
            batch_size=4,
            optimizer=OptimizerConfig("adam", learning_rate=0.01),
            max_epochs=8,
            patience=8,
        )
        result = train(manifest, ENCODER, DecoderConfig(hidden=8, embed_dim=4), cfg)
        assert result.history[-1]["train_loss"] < result.history[0]["train_loss"]
        assert result.model.meta["epochs_run"] == len(result.history)
        assert result.model.meta["train"]["optimizer"]["kind"] == "adam"
        report = evaluate_classifier(result.model, manifest.by_split(TEST))
        assert 0.0 <= report.ccr <= 1.0

    @pytest.mark.parametrize("task,level", [(CLASSIFICATION, None), (CAPTIONING, "normal")])
    def test_same_seed_reproduces_run(self, manifest, task, level):
        cfg = TrainConfig(task=task, level=level, batch_size=4, max_epochs=2, seed=9)
        decoder = DecoderConfig(hidden=8, embed_dim=4, max_len=12)
        first = train(manifest, ENCODER, decoder, cfg)
        second = train(manifest, ENCODER, decoder, cfg)
        assert checkpoint_bytes(first.model) == checkpoint_bytes(second.model)
        assert json.dumps(first.history) == json.dumps(second.history)
        test = manifest.by_split(TEST)
        if task == CLASSIFICATION:
            reports = [evaluate_classifier(r.model, test) for r in (first, second)]
            assert render_metrics(reports[0], JSON) == render_metrics(reports[1], JSON)
        else:
            assert evaluate_captioner(first.model, test) == evaluate_captioner(second.model, test)

    def test_captioning_targets(self, manifest):
        cfg = TrainConfig(task=CAPTIONING, level="basic", batch_size=4, max_epochs=1)
        result = train(manifest, ENCODER, DecoderConfig(hidden=8, embed_dim=4), cfg)
        assert result.model.level == "basic"
        assert len(result.model.vocab) > len(CLASSES) + 4
        assert "." in result.model.vocab

    def test_divergence(self, monkeypatch, manifest):
        monkeypatch.setattr(capnet, "sequence_loss", lambda *args, **kwargs: math.nan)
        cfg = TrainConfig(task=CLASSIFICATION, batch_size=4, max_epochs=2)
        with pytest.raises(TrainingDiverged):
            train(manifest, ENCODER, DecoderConfig(hidden=8, embed_dim=4), cfg)

    def test_needs_validation_split(self):
        unsplit = build_dataset(4, 0, master_seed=0, size=SIZE)
        with pytest.raises(DatasetError):
            train(unsplit, ENCODER, DecoderConfig(hidden=8), TrainConfig())


class TestGrid:
    def test_full_grid_size(self):
        assert len(GridSpec.full(cells=("gru",)).points()) == 400
        assert len(GridSpec.full().points()) == 800

    def test_enumeration_order(self):
        grid = GridSpec(cells=("gru", "lstm"), neurons=(64, 128))
        points = grid.points()
        assert [(p.cell, p.neurons) for p in points] == [
            ("gru", 64),
            ("gru", 128),
            ("lstm", 64),
            ("lstm", 128),
        ]

    def test_paper_axes_enforced(self):
        with pytest.raises(ConfigError):
            GridSpec(neurons=(100,), paper=True)
        GridSpec(neurons=(100,))

    def test_unknown_scale(self):
        with pytest.raises(ConfigError):
            GridSpec(encoder_scales=("resnet",))

    def test_run_grid_rows(self, manifest):
        grid = GridSpec(
            cells=("gru", "lstm"),
            encoder_scales=("vgg-small",),
            neurons=(8,),
            max_epochs=1,
            patience=1,
            image_size=SIZE,
        )
        rows = run_grid(manifest, grid)
        assert [r.rnn for r in rows] == ["gru", "lstm"]
        for row in rows:
            assert not row.diverged
            assert 0.0 <= row.test_ccr <= 1.0

    def test_diverged_point_is_recorded(self, monkeypatch, manifest):
        monkeypatch.setattr(capnet, "sequence_loss", lambda *args, **kwargs: math.nan)
        grid = GridSpec(encoder_scales=("vgg-small",), neurons=(8,), max_epochs=1, image_size=SIZE)
        (row,) = run_grid(manifest, grid)
        assert row.diverged
        assert math.isnan(row.test_ccr)

    def test_needs_test_split(self):
        unsplit = build_dataset(4, 0, master_seed=0, size=SIZE)
        with pytest.raises(DatasetError):
            run_grid(unsplit, GridSpec(image_size=SIZE))


@pytest.mark.slow
def test_desk_classifier_beats_chance():
    data = split_dataset(build_dataset(120, 1, master_seed=7, size=SIZE), master_seed=7)
    cfg = TrainConfig(
        task=CLASSIFICATION,
        batch_size=8,
        optimizer=OptimizerConfig("adam", learning_rate=0.001),
        max_epochs=15,
        patience=4,
    )
    encoder = EncoderConfig.scaled("vgg-small", size=SIZE, feature_dim=32)
    result = train(data, encoder, DecoderConfig(hidden=64, embed_dim=16), cfg)
    report = evaluate_classifier(result.model, data.by_split(TEST))
    assert report.ccr > 0.5


def _preset_run(data, name, level=None):
    preset = PRESETS[name]
    cfg = TrainConfig(
        task=preset["task"],
        level=level,
        batch_size=preset["batch"],
        optimizer=OptimizerConfig(preset["optimizer"], learning_rate=preset["lr"]),
        seed=7,
    )
    encoder = EncoderConfig.scaled(preset["encoder_scale"], size=64)
    return train(data, encoder, DecoderConfig(hidden=preset["hidden"]), cfg)


@pytest.mark.slow
class TestDeskAcceptance:
    @pytest.fixture(scope="class")
    def desk_data(self):
        data = build_dataset(500, 3, master_seed=7, size=64)
        assert len(data) == 2000
        return split_dataset(data, master_seed=7)

    @pytest.fixture(scope="class")
    def classifier_report(self, desk_data):
        result = _preset_run(desk_data, "desk-classification")
        return evaluate_classifier(result.model, desk_data.by_split(TEST))

    def test_classifier_ccr(self, classifier_report):
        assert classifier_report.ccr >= 0.90

    def test_every_class_f1(self, classifier_report):
        for name in CLASSES:
            assert classifier_report.per_class[name][2] >= 0.85, name

    @pytest.mark.parametrize("level", ["basic", "normal"])
    def test_captioner_exact_match(self, desk_data, level):
        result = _preset_run(desk_data, "desk-captioning", level)
        assert evaluate_captioner(result.model, desk_data.by_split(TEST)) >= 0.85

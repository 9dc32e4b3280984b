"""Metrics, caption matching and result tables."""

import json
import math

import pytest

from gemcap.error_handler import ClassError, EmptyEvaluation, InputMismatch
from gemcap.evalkit import (
    JSON,
    ResultRow,
    best_row,
    canonical_caption,
    ccr,
    classification_report,
    confusion,
    exact_match,
    prf1,
    render_metrics,
    render_report,
)

CLASSIFICATION_ROWS = [
    ResultRow("InceptionV3", "gru", 1024, 0.9187, 0.1026, 0.9161),
    ResultRow("VGG-16", "gru", 512, 0.9314, 0.0390, 0.9464),
    ResultRow("MobileNet", "gru", 64, 0.8851, 0.2696, 0.8802),
    ResultRow("InceptionV3", "lstm", 1024, 0.9487, 0.0301, 0.9193),
    ResultRow("VGG-16", "lstm", 512, 0.9597, 0.0542, 0.9227),
    ResultRow("MobileNet", "lstm", 64, 0.8811, 0.2208, 0.8775),
]

CAPTIONING_ROWS = [
    ResultRow("InceptionV3", "lstm", 512, 0.9307, 0.0615, 0.8439),
    ResultRow("VGG-16", "lstm", 512, 0.9270, 0.0881, 0.9036),
    ResultRow("InceptionV3", "gru", 256, 0.9483, 0.0921, 0.8354),
    ResultRow("VGG-16", "gru", 256, 0.9633, 0.0706, 0.9345),
]


class TestClassificationMetrics:
    def test_ccr(self):
        assert ccr(["ring", "ring", "bracelet"], ["ring", "necklace", "bracelet"]) == 2 / 3

    def test_ccr_errors(self):
        with pytest.raises(InputMismatch):
            ccr(["ring"], [])
        with pytest.raises(EmptyEvaluation):
            ccr([], [])

    def test_confusion_rows_are_true_classes(self):
        cm = confusion(["ring", "ring"], ["necklace", "ring"])
        assert cm.counts[cm.index("necklace"), cm.index("ring")] == 1
        assert cm.trace == 1
        assert cm.total == 2

    def test_unknown_class(self):
        with pytest.raises(ClassError):
            confusion(["tiara"], ["ring"])

    def test_prf1(self):
        preds = ["ring", "ring", "ring", "necklace"]
        labels = ["ring", "ring", "necklace", "necklace"]
        precision, recall, f1 = prf1(confusion(preds, labels), "ring")
        assert precision == pytest.approx(2 / 3)
        assert recall == 1.0
        assert f1 == pytest.approx(0.8)

    def test_undefined_scores_are_zero_with_warning(self):
        report = classification_report(["ring", "ring"], ["ring", "necklace"])
        assert report.per_class["bracelet"] == (0.0, 0.0, 0.0)
        assert any("bracelet" in note for note in report.warnings)
        assert report.ccr == 0.5

    def test_render_json(self):
        report = classification_report(
            ["ring", "necklace"],
            ["ring", "necklace"],
            captions=(["Ring in silver."], ["ring in silver"]),
        )
        data = json.loads(render_metrics(report, JSON))
        assert data["ccr"] == 1.0
        assert data["caption_exact_match"] == 1.0
        assert data["per_class"]["ring"] == {"precision": 1.0, "recall": 1.0, "f1": 1.0}

    def test_render_text(self):
        report = classification_report(["ring"], ["ring"])
        text = render_metrics(report)
        assert text.startswith("CCR: 1.0000")
        assert "macro avg" in text


class TestCaptionMatch:
    def test_canonical(self):
        assert canonical_caption("Earrings  in Yellow gold..") == "earrings in yellow gold."

    def test_exact_match(self):
        generated = ["Ring in silver.", "Ring in gold."]
        gold = ["ring in silver", "Ring in silver."]
        assert exact_match(generated, gold) == 0.5


class TestResultTable:
    def test_best_classification_row(self):
        assert best_row(CLASSIFICATION_ROWS) == 1

    def test_best_captioning_row(self):
        assert best_row(CAPTIONING_ROWS) == 3

    def test_tie_goes_to_lower_val_loss(self):
        rows = [
            ResultRow("vgg-small", "gru", 64, 0.9, 0.20, 0.95),
            ResultRow("vgg-small", "lstm", 64, 0.9, 0.10, 0.95),
            ResultRow("vgg-wide", "gru", 64, 0.9, 0.05, 0.90),
        ]
        assert best_row(rows) == 1

    def test_diverged_rows_never_win(self):
        rows = [
            ResultRow("vgg-small", "gru", 64, math.nan, math.nan, math.nan, diverged=True),
            ResultRow("vgg-small", "lstm", 64, 0.5, 1.0, 0.4),
        ]
        assert best_row(rows) == 1
        assert "diverged" in render_report(rows)

    def test_empty(self):
        with pytest.raises(EmptyEvaluation):
            best_row([])

    def test_text_marks_best(self):
        lines = render_report(CAPTIONING_ROWS).splitlines()
        marked = [line for line in lines if line.startswith("*")]
        assert len(marked) == 2
        assert "VGG-16" in marked[0] and "0.9345" in marked[0]

    def test_json(self):
        data = json.loads(render_report(CLASSIFICATION_ROWS, JSON))
        assert data["best"] == 1
        assert [row["best"] for row in data["rows"]] == [False, True, False, False, False, False]

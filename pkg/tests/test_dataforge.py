"""Rendering, augmentation, splits and manifest files."""

import json

import numpy as np
import pytest

from gemcap.dataforge import (
    AUGMENT_BOUNDS,
    CLASSES,
    TEST,
    TRAIN,
    VAL,
    AugmentKind,
    AugmentOp,
    Manifest,
    RenderSpec,
    Sample,
    apply_augment,
    build_dataset,
    load_png,
    read_manifest,
    render_sample,
    sample_augment,
    save_png,
    split_counts,
    split_dataset,
    stack_images,
    write_images,
    write_manifest,
)
from gemcap.error_handler import (
    AugmentOutOfRange,
    ClassError,
    DatasetError,
    InvalidShape,
    LexiconMiss,
    ManifestParseError,
    StratificationError,
)
from gemcap.lexicon import LEVELS, validate_description
from gemcap.tensor import Rng


@pytest.fixture(scope="module")
def small_manifest():
    return build_dataset(8, 2, master_seed=5, size=32)


def _image(seed, size=16):
    return Rng(seed).uniform(0.0, 1.0, (3, size, size))


class TestRender:
    @pytest.mark.parametrize("jewelry_class", CLASSES)
    def test_shape_and_range(self, jewelry_class):
        image = render_sample(RenderSpec(jewelry_class, "yellow gold", "ruby"), (32, 48))
        assert image.shape == (3, 32, 48)
        assert image.min() >= 0.0 and image.max() <= 1.0

    def test_deterministic(self):
        spec = RenderSpec("ring", "silver", "emerald", geometry_jitter_seed=3)
        np.testing.assert_array_equal(render_sample(spec), render_sample(spec))

    def test_classes_differ(self):
        images = [render_sample(RenderSpec(c, "rose gold")) for c in CLASSES]
        for i in range(len(images)):
            for j in range(i + 1, len(images)):
                assert not np.array_equal(images[i], images[j])

    def test_too_small(self):
        with pytest.raises(InvalidShape):
            render_sample(RenderSpec("ring", "silver"), (16, 16))

    def test_unknown_class(self):
        with pytest.raises(ClassError):
            render_sample(RenderSpec("tiara", "silver"))

    def test_unrenderable_material(self):
        with pytest.raises(LexiconMiss):
            render_sample(RenderSpec("ring", "platinum"))


class TestAugment:
    def test_random_cases_keep_shape_and_range(self):
        for i in range(10000):
            rng = Rng(21, i)
            image = _image(i % 50)
            op = sample_augment(rng)
            out = apply_augment(image, op, rng.split(1))
            assert out.shape == image.shape, op
            assert out.min() >= 0.0 and out.max() <= 1.0, op

    def test_identities(self):
        image = _image(0)
        rng = Rng(0)
        out = image
        for _ in range(4):
            out = apply_augment(out, AugmentOp(AugmentKind.ROTATE90, 1), rng)
        np.testing.assert_array_equal(out, image)
        for kind in (AugmentKind.FLIP_H, AugmentKind.FLIP_V):
            once = apply_augment(image, AugmentOp(kind), rng)
            twice = apply_augment(once, AugmentOp(kind), rng)
            np.testing.assert_array_equal(twice, image)
        same = apply_augment(image, AugmentOp(AugmentKind.BRIGHTNESS, 1.0), rng)
        np.testing.assert_array_equal(same, image)

    def test_shift_fills_with_shade(self):
        image = _image(1)
        out = apply_augment(image, AugmentOp(AugmentKind.WIDTH_SHIFT, 0.25), Rng(0), fill=0.5)
        np.testing.assert_array_equal(out[:, :, :4], 0.5)
        np.testing.assert_array_equal(out[:, :, 4:], image[:, :, :-4])

    def test_odd_rotation_needs_square(self):
        image = Rng(0).uniform(0.0, 1.0, (3, 8, 16))
        with pytest.raises(InvalidShape):
            apply_augment(image, AugmentOp(AugmentKind.ROTATE90, 1), Rng(0))

    @pytest.mark.parametrize(
        "kind,value",
        [
            (AugmentKind.ROTATE90, 4),
            (AugmentKind.ROTATE90, 1.5),
            (AugmentKind.ZOOM, 0.2),
            (AugmentKind.BRIGHTNESS, 0.0),
            (AugmentKind.CUT, 0.5),
        ],
    )
    def test_out_of_range(self, kind, value):
        with pytest.raises(AugmentOutOfRange):
            AugmentOp(kind, value)

    def test_sampled_ops_in_bounds(self):
        for i in range(500):
            op = sample_augment(Rng(8, i))
            low, high = AUGMENT_BOUNDS[op.kind]
            assert low <= op.value <= high


class TestBuild:
    def test_counts_and_ids(self, small_manifest):
        assert len(small_manifest) == 8 * 3
        assert len(small_manifest.originals()) == 8
        assert len({s.id for s in small_manifest}) == len(small_manifest)

    def test_children_share_label_and_captions(self, small_manifest):
        for sample in small_manifest:
            if sample.is_original:
                continue
            parent = small_manifest.get(sample.provenance.parent_id)
            assert sample.jewelry_class == parent.jewelry_class
            assert sample.captions == parent.captions

    def test_captions_validate(self, small_manifest):
        for sample in small_manifest.originals():
            for level in LEVELS:
                assert validate_description(sample.caption(level), level)

    def test_thread_count_does_not_change_output(self, monkeypatch, small_manifest):
        monkeypatch.setattr("gemcap.dataforge.worker_count", lambda: 3)
        threaded = build_dataset(8, 2, master_seed=5, size=32)
        for a, b in zip(small_manifest, threaded):
            assert a == b
            np.testing.assert_array_equal(a.image, b.image)

    def test_rejects_tiny_base(self):
        with pytest.raises(DatasetError):
            build_dataset(3, 1, master_seed=0, size=32)


class TestSplit:
    def test_split_counts(self):
        assert split_counts(5374) == (4030, 806, 538)
        assert split_counts(10) == (7, 1, 2)

    def test_stratified_and_children_follow_parent(self):
        manifest = split_dataset(build_dataset(40, 1, master_seed=2, size=32), master_seed=2)
        for jewelry_class in CLASSES:
            originals = [s for s in manifest.originals() if s.jewelry_class == jewelry_class]
            counts = [sum(s.split == name for s in originals) for name in (TRAIN, VAL, TEST)]
            assert counts == [7, 1, 2]
        for sample in manifest:
            if not sample.is_original:
                assert sample.split == manifest.get(sample.provenance.parent_id).split

    def test_missing_class(self, small_manifest):
        rings_removed = Manifest([s for s in small_manifest if s.jewelry_class != "ring"])
        with pytest.raises(StratificationError):
            split_dataset(rings_removed)

    def test_bad_fractions(self, small_manifest):
        with pytest.raises(ValueError):
            split_dataset(small_manifest, (0.5, 0.5, 0.5))


class TestManifestFile:
    def test_round_trip(self, tmp_path, small_manifest):
        tagged = split_dataset(small_manifest, master_seed=1)
        path = tmp_path / "manifest.jsonl"
        write_manifest(tagged, path)
        assert read_manifest(path) == tagged

    def test_empty(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        write_manifest(Manifest(), path)
        assert len(read_manifest(path)) == 0

    def test_missing_field(self, tmp_path, small_manifest):
        row = small_manifest.samples[0].to_row()
        del row["caption_normal"]
        path = tmp_path / "manifest.jsonl"
        path.write_text(json.dumps(row) + "\n", encoding="utf-8")
        with pytest.raises(ManifestParseError) as info:
            read_manifest(path)
        assert info.value.details["line"] == 1

    def test_duplicate_id(self, tmp_path, small_manifest):
        line = json.dumps(small_manifest.samples[0].to_row())
        path = tmp_path / "manifest.jsonl"
        path.write_text(line + "\n" + line + "\n", encoding="utf-8")
        with pytest.raises(ManifestParseError):
            read_manifest(path)

    def test_bad_json(self, tmp_path):
        path = tmp_path / "manifest.jsonl"
        path.write_text("{oops\n", encoding="utf-8")
        with pytest.raises(ManifestParseError):
            read_manifest(path)


class TestImages:
    def test_png_round_trip_within_quantisation(self, tmp_path):
        image = render_sample(RenderSpec("bracelet", "white gold", "topaz"), (32, 32))
        save_png(image, tmp_path / "x.png")
        np.testing.assert_allclose(load_png(tmp_path / "x.png"), image, atol=0.5 / 255 + 1e-12)

    def test_load_resizes(self, tmp_path):
        save_png(_image(3, 40), tmp_path / "x.png")
        assert load_png(tmp_path / "x.png", (32, 32)).shape == (3, 32, 32)

    def test_write_then_stack_from_disk(self, tmp_path, small_manifest):
        write_images(small_manifest, tmp_path)
        on_disk = [
            Sample(s.id, s.jewelry_class, s.captions, s.spec, path=s.path) for s in small_manifest
        ]
        stacked = stack_images(on_disk[:3], tmp_path)
        assert stacked.shape == (3, 3, 32, 32)
        expected = small_manifest.samples[0].image
        np.testing.assert_allclose(stacked[0], expected, atol=0.5 / 255 + 1e-12)

    def test_no_image_no_root(self, small_manifest):
        sample = small_manifest.samples[0]
        bare = Sample(sample.id, sample.jewelry_class, sample.captions, sample.spec)
        with pytest.raises(DatasetError):
            stack_images([bare])

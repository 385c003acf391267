"""Dataset ingestion, subsampling, rotation and the generated variants."""

import math

import numpy as np
import pytest

from bcnn.data import (
    AugmentStream,
    FormatError,
    LabeledDataset,
    compose_background,
    dataset_manifest,
    load_base_digits,
    load_digits_fallback,
    load_idx,
    load_texture,
    pad_to_odd,
    read_pgm,
    rotate_dataset,
    rotate_image,
    stratified_subsample,
    write_idx,
    write_pgm,
)


def synth_dataset(n=100, size=12, classes=10, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.random((n, size, size, 1))
    labels = np.repeat(np.arange(classes), n // classes)
    return LabeledDataset(images, labels, classes)


class TestIdx:
    def test_roundtrip(self, tmp_path):
        ds = synth_dataset(40)
        write_idx(tmp_path / "imgs", tmp_path / "lbls", ds)
        back = load_idx(tmp_path / "imgs", tmp_path / "lbls")
        assert np.array_equal(back.labels, ds.labels)
        assert back.images.shape == ds.images.shape
        # 8-bit quantization bound
        assert np.abs(back.images - ds.images).max() <= 0.5 / 255

    def test_parses_reference_layout(self, tmp_path):
        import struct

        # two 2x3 images, big-endian header, row-major pixels
        pixels = bytes(range(12))
        (tmp_path / "imgs").write_bytes(struct.pack(">IIII", 0x803, 2, 2, 3) + pixels)
        (tmp_path / "lbls").write_bytes(struct.pack(">II", 0x801, 2) + bytes([7, 1]))
        ds = load_idx(tmp_path / "imgs", tmp_path / "lbls")
        assert ds.images.shape == (2, 2, 3, 1)
        assert ds.images[0, 0, 2, 0] == pytest.approx(2 / 255)
        assert list(ds.labels) == [7, 1]

    def test_bad_magic_names_offset(self, tmp_path):
        import struct

        (tmp_path / "imgs").write_bytes(struct.pack(">IIII", 0x9999, 1, 2, 2) + bytes(4))
        (tmp_path / "lbls").write_bytes(struct.pack(">II", 0x801, 1) + bytes(1))
        with pytest.raises(FormatError, match="byte 0"):
            load_idx(tmp_path / "imgs", tmp_path / "lbls")

    def test_truncation_names_exact_offset(self, tmp_path):
        import struct

        blob = struct.pack(">IIII", 0x803, 2, 2, 2) + bytes(7)  # one byte short
        (tmp_path / "imgs").write_bytes(blob)
        (tmp_path / "lbls").write_bytes(struct.pack(">II", 0x801, 2) + bytes(2))
        with pytest.raises(FormatError, match=f"byte {16 + 7}"):
            load_idx(tmp_path / "imgs", tmp_path / "lbls")

    def test_fallback_histogram_nonempty(self):
        ds = load_digits_fallback()
        hist = ds.class_histogram()
        assert len(hist) == 10
        assert np.all(hist > 0)


class TestPgm:
    @pytest.mark.parametrize("maxval", [255, 65535])
    def test_roundtrip(self, tmp_path, maxval):
        rng = np.random.default_rng(1)
        img = rng.random((7, 5))
        path = tmp_path / "img.pgm"
        write_pgm(path, img, maxval=maxval)
        back = read_pgm(path)
        assert back.shape == (7, 5)
        assert np.abs(back - img).max() <= 0.5 / maxval

    def test_comment_handling(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes([0, 128, 255, 64]))
        img = read_pgm(path)
        assert img[0, 1] == pytest.approx(128 / 255)

    def test_rejects_non_pgm(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
        with pytest.raises(FormatError):
            read_pgm(path)


class TestStratifiedSubsample:
    def test_balanced_120_gives_12_per_class(self):
        ds = synth_dataset(500)
        sub = stratified_subsample(ds, 120, seed=3)
        assert np.all(sub.class_histogram() == 12)

    def test_full_count_is_permutation(self):
        ds = synth_dataset(60)
        sub = stratified_subsample(ds, 60, seed=4)
        assert np.array_equal(np.sort(sub.images.sum(axis=(1, 2, 3))),
                              np.sort(ds.images.sum(axis=(1, 2, 3))))

    def test_two_seeds_differ_same_histogram(self):
        ds = synth_dataset(500)
        a = stratified_subsample(ds, 120, seed=5)
        b = stratified_subsample(ds, 120, seed=6)
        assert np.array_equal(a.class_histogram(), b.class_histogram())
        assert not np.array_equal(a.images, b.images)

    def test_deterministic_and_idempotent(self):
        ds = synth_dataset(500)
        a = stratified_subsample(ds, 120, seed=7)
        b = stratified_subsample(ds, 120, seed=7)
        assert np.array_equal(a.images, b.images)
        again = stratified_subsample(a, 120, seed=7)
        assert np.array_equal(np.sort(again.images.sum(axis=(1, 2, 3))),
                              np.sort(a.images.sum(axis=(1, 2, 3))))

    def test_validation(self):
        ds = synth_dataset(50)
        with pytest.raises(ValueError):
            stratified_subsample(ds, 51, seed=0)
        with pytest.raises(ValueError):
            stratified_subsample(ds, 5, seed=0)


class TestRotateImage:
    def test_zero_angle_bit_exact(self):
        rng = np.random.default_rng(8)
        img = rng.random((13, 13))
        assert np.array_equal(rotate_image(img, 0.0), img)

    def test_quarter_turns_compose_exactly(self):
        rng = np.random.default_rng(9)
        img = rng.random((12, 12, 1))
        twice = rotate_image(rotate_image(img, math.pi / 2), math.pi / 2)
        assert np.array_equal(twice, rotate_image(img, math.pi))

    def test_quarter_turn_matches_rot90(self):
        rng = np.random.default_rng(10)
        img = rng.random((9, 9))
        assert np.array_equal(rotate_image(img, math.pi / 2), np.rot90(img, 1))

    def test_bilinear_roundtrip_error_small(self, digit28):
        angle = math.radians(30)
        back = rotate_image(rotate_image(digit28, angle), -angle)
        assert np.abs(back - digit28).mean() < 0.05

    def test_intensity_preserved_inside_disk(self, digit28):
        # content fully inside the inscribed disk keeps ~total intensity
        rotated = rotate_image(digit28, math.radians(37))
        assert abs(rotated.sum() - digit28.sum()) <= 0.02 * digit28.sum()

    def test_rectangular_rejected(self):
        with pytest.raises(ValueError):
            rotate_image(np.zeros((4, 6)), 0.3)

    def test_pad_to_odd(self):
        img = np.ones((28, 28))
        out = pad_to_odd(img)
        assert out.shape == (29, 29)
        assert np.array_equal(out[:28, :28], img)
        assert np.all(out[28, :] == 0) and np.all(out[:, 28] == 0)


class TestAugmentStream:
    def test_none_policy_identical_epochs(self):
        ds = synth_dataset(30)
        stream = AugmentStream(ds, "none", seed=11, batch_size=8)
        e1 = [b[0].copy() for b in stream.epoch(0)]
        e2 = [b[0].copy() for b in stream.epoch(1)]
        assert all(np.array_equal(a, b) for a, b in zip(e1, e2))

    def test_rotation_policy_differs_per_epoch(self):
        ds = synth_dataset(30, size=13)
        stream = AugmentStream(ds, "online-rotations", seed=12, batch_size=8)
        s1 = sum(b[0].sum() for b in stream.epoch(0))
        s2 = sum(b[0].sum() for b in stream.epoch(1))
        assert s1 != s2

    def test_seeded_repeat_identical(self):
        ds = synth_dataset(30, size=13)
        a = AugmentStream(ds, "online-rotations", seed=13, batch_size=8)
        b = AugmentStream(ds, "online-rotations", seed=13, batch_size=8)
        for (xa, ya), (xb, yb) in zip(a.epoch(4), b.epoch(4)):
            assert np.array_equal(xa, xb) and np.array_equal(ya, yb)

    def test_unknown_policy(self):
        with pytest.raises(ValueError):
            AugmentStream(synth_dataset(10), "mixup", 0, 4)


class TestGeneratedVariants:
    def test_rotate_dataset_deterministic(self):
        ds = synth_dataset(10, size=15)
        a = rotate_dataset(ds, seed=14)
        b = rotate_dataset(ds, seed=14)
        assert np.array_equal(a.images, b.images)
        assert not np.array_equal(a.images, ds.images)

    def test_background_compositing(self):
        ds = load_digits_fallback().subset(np.arange(8))
        textured = compose_background(ds, load_texture(), seed=15)
        # digit pixels survive max compositing; background fills the rest
        assert np.all(textured.images >= ds.images - 1e-12)
        assert textured.images.mean() > ds.images.mean()

    def test_split_pools_are_disjoint_and_labeled(self):
        train, tag = load_base_digits(True)
        test, tag2 = load_base_digits(False)
        assert tag == tag2
        a = {img.tobytes() for img in train.images[..., 0]}
        b = {img.tobytes() for img in test.images[..., 0]}
        assert not (a & b)

    def test_manifest_records_source(self):
        import json

        ds = synth_dataset(20)
        doc = json.loads(dataset_manifest("digits-fallback", "rot", 3, ds))
        assert doc["source"] == "digits-fallback"
        assert doc["count"] == 20
        assert doc["seed"] == 3

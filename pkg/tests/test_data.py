"""Dataset loading, splitting, geometry, and normalization tests."""

import logging

import numpy as np
import pytest

from patchcraft.data import (AugmentPolicy, Dataset, DatasetError, LabeledImage,
                             SplitError, augment, compute_norm_stats,
                             denormalize, hflip, load_dataset, normalize,
                             read_ppm, resize, rotate, stratified_split,
                             write_ppm)

from conftest import SOIL_CLASSES, write_flat_tree


def _dataset_of(labels, class_names, size=4):
    rng = np.random.default_rng(0)
    items = [LabeledImage(rng.random((size, size, 3)).astype(np.float32), label,
                          f"mem://{i}") for i, label in enumerate(labels)]
    return Dataset(items, class_names)


class TestPpm:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = (rng.integers(0, 256, (5, 7, 3)) / 255.0).astype(np.float32)
        path = tmp_path / "img.ppm"
        write_ppm(path, img)
        np.testing.assert_allclose(read_ppm(path), img, atol=1e-7)

    def test_header_comments_are_skipped(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n# a comment\n2 1\n# another\n255\n" + bytes(6))
        assert read_ppm(path).shape == (1, 2, 3)

    def test_wrong_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P3\n1 1\n255\n000")
        with pytest.raises(DatasetError, match="P6"):
            read_ppm(path)

    def test_unsupported_depth_rejected(self, tmp_path):
        path = tmp_path / "deep.ppm"
        path.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
        with pytest.raises(DatasetError, match="maxval"):
            read_ppm(path)

    def test_truncated_pixels_rejected(self, tmp_path):
        path = tmp_path / "trunc.ppm"
        path.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
        with pytest.raises(DatasetError, match="truncated"):
            read_ppm(path)


class TestLoadDataset:
    def test_class_names_sorted_and_labeled(self, flat_tree):
        ds = load_dataset(flat_tree)
        assert ds.class_names == SOIL_CLASSES
        assert len(ds) == 32
        assert sorted(set(ds.labels())) == [0, 1, 2, 3]

    def test_item_order_is_deterministic(self, flat_tree):
        a = load_dataset(flat_tree)
        b = load_dataset(flat_tree)
        assert [i.source_path for i in a.items] == [i.source_path for i in b.items]

    def test_pixels_are_unit_interval_float32(self, flat_tree):
        ds = load_dataset(flat_tree)
        img = ds.items[0].pixels
        assert img.dtype == np.float32
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_empty_class_directory_rejected(self, tmp_path):
        root = write_flat_tree(tmp_path / "soil", n_per_class=2)
        (root / "peat").mkdir()
        with pytest.raises(DatasetError, match="peat"):
            load_dataset(root)

    def test_fewer_than_two_classes_rejected(self, tmp_path):
        root = tmp_path / "soil"
        (root / "only").mkdir(parents=True)
        write_ppm(root / "only" / "a.ppm", np.zeros((2, 2, 3), dtype=np.float32))
        with pytest.raises(DatasetError, match="2 class"):
            load_dataset(root)

    def test_undecodable_file_is_skipped_with_warning(self, tmp_path, caplog):
        root = write_flat_tree(tmp_path / "soil", n_per_class=2)
        (root / "alluvial" / "broken.png").write_bytes(b"not a png at all")
        with caplog.at_level(logging.WARNING):
            ds = load_dataset(root)
        assert len(ds) == 8
        assert any("broken.png" in rec.message for rec in caplog.records)

    def test_non_image_extensions_ignored(self, tmp_path):
        root = write_flat_tree(tmp_path / "soil", n_per_class=2)
        (root / "alluvial" / "notes.txt").write_text("not an image")
        assert len(load_dataset(root)) == 8


class TestStratifiedSplit:
    def test_counts_for_fraction_point_two(self):
        ds = _dataset_of([c for c in range(4) for _ in range(100)],
                         ["a", "b", "c", "d"], size=1)
        train, test = stratified_split(ds, 0.2, seed=0)
        assert len(train) == 320 and len(test) == 80
        for label in range(4):
            assert sum(1 for i in test.items if i.label == label) == 20

    def test_half_split_on_ten_items(self):
        ds = _dataset_of([0] * 10 + [1] * 10, ["a", "b"], size=1)
        train, test = stratified_split(ds, 0.5, seed=1)
        assert sum(1 for i in test.items if i.label == 0) == 5
        assert sum(1 for i in train.items if i.label == 0) == 5

    def test_same_seed_same_membership(self, flat_dataset):
        a_train, a_test = stratified_split(flat_dataset, 0.25, seed=9)
        b_train, b_test = stratified_split(flat_dataset, 0.25, seed=9)
        assert [i.source_path for i in a_test.items] == [i.source_path for i in b_test.items]
        assert [i.source_path for i in a_train.items] == [i.source_path for i in b_train.items]

    def test_different_seed_changes_membership(self, flat_dataset):
        _, a_test = stratified_split(flat_dataset, 0.25, seed=9)
        picks = {tuple(i.source_path for i in stratified_split(flat_dataset, 0.25, s)[1].items)
                 for s in range(6)}
        assert len(picks) > 1

    def test_disjoint_and_exhaustive(self, flat_dataset):
        train, test = stratified_split(flat_dataset, 0.2, seed=3)
        train_paths = {i.source_path for i in train.items}
        test_paths = {i.source_path for i in test.items}
        assert not train_paths & test_paths
        assert train_paths | test_paths == {i.source_path for i in flat_dataset.items}

    def test_tiny_class_rejected(self):
        ds = _dataset_of([0, 1, 1], ["a", "b"], size=1)
        with pytest.raises(SplitError, match="'a'"):
            stratified_split(ds, 0.5, seed=0)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1, 1.5])
    def test_fraction_bounds(self, fraction, flat_dataset):
        with pytest.raises(ValueError):
            stratified_split(flat_dataset, fraction, seed=0)


class TestResize:
    def test_same_size_is_identity(self):
        img = np.random.default_rng(4).random((9, 9, 3)).astype(np.float32)
        np.testing.assert_allclose(resize(img, 9), img, atol=1e-6)

    def test_constant_image_stays_constant(self):
        img = np.full((5, 7, 3), 0.37, dtype=np.float32)
        out = resize(img, 11)
        np.testing.assert_allclose(out, np.full((11, 11, 3), 0.37), atol=1e-6)

    def test_checkerboard_center_is_half(self):
        # 2x2 {0,1} checkerboard to 3x3: center sits midway between all four
        # corners, so bilinear gives (0+1+1+0)/4 = 0.5
        img = np.zeros((2, 2, 3), dtype=np.float32)
        img[0, 1] = 1.0
        img[1, 0] = 1.0
        out = resize(img, 3)
        np.testing.assert_allclose(out[1, 1], [0.5, 0.5, 0.5], atol=1e-6)

    def test_values_stay_in_unit_interval(self):
        img = np.random.default_rng(5).random((13, 6, 3)).astype(np.float32)
        out = resize(img, 21)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_non_square_input_becomes_square(self):
        img = np.random.default_rng(6).random((5, 12, 3)).astype(np.float32)
        assert resize(img, 8).shape == (8, 8, 3)

    def test_bad_target_rejected(self):
        with pytest.raises(ValueError):
            resize(np.zeros((4, 4, 3), dtype=np.float32), 0)


class TestAugment:
    def test_disabled_policy_is_identity(self):
        img = np.random.default_rng(7).random((6, 6, 3)).astype(np.float32)
        out = augment(img, np.random.default_rng(0), AugmentPolicy(enabled=False))
        assert out is img

    def test_hflip_is_an_involution(self):
        img = np.random.default_rng(8).random((6, 6, 3)).astype(np.float32)
        np.testing.assert_array_equal(hflip(hflip(img)), img)

    def test_rotate_zero_is_identity(self):
        img = np.random.default_rng(9).random((6, 6, 3)).astype(np.float32)
        np.testing.assert_allclose(rotate(img, 0.0), img, atol=1e-6)

    def test_rotation_keeps_values_in_range(self):
        img = np.random.default_rng(10).random((8, 8, 3)).astype(np.float32)
        out = rotate(img, 0.1)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_augment_is_deterministic_per_rng(self):
        img = np.random.default_rng(11).random((6, 6, 3)).astype(np.float32)
        a = augment(img, np.random.default_rng(42))
        b = augment(img, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)


class TestNormalization:
    def test_constant_corpus(self):
        items = [LabeledImage(np.full((4, 4, 3), 0.5, dtype=np.float32), l, str(l))
                 for l in (0, 1)]
        ds = Dataset(items, ["a", "b"])
        stats = compute_norm_stats(ds, 4)
        np.testing.assert_allclose(stats.mean, [0.5] * 3, atol=1e-6)
        out = normalize(items[0].pixels, stats)
        np.testing.assert_allclose(out, np.zeros((4, 4, 3)), atol=1e-3)

    def test_normalized_corpus_has_zero_mean_unit_std(self):
        rng = np.random.default_rng(12)
        items = [LabeledImage(rng.random((8, 8, 3)).astype(np.float32), 0, str(i))
                 for i in range(20)]
        ds = Dataset(items, ["a", "b"])
        stats = compute_norm_stats(ds, 8)
        stacked = np.concatenate([normalize(resize(i.pixels, 8), stats).reshape(-1, 3)
                                  for i in items])
        assert np.abs(stacked.mean(axis=0)).max() < 1e-4
        np.testing.assert_allclose(stacked.std(axis=0), np.ones(3), atol=1e-3)

    def test_train_stats_keep_test_finite(self, flat_dataset):
        train, test = stratified_split(flat_dataset, 0.25, seed=0)
        stats = compute_norm_stats(train, 16)
        for item in test.items:
            assert np.all(np.isfinite(normalize(resize(item.pixels, 16), stats)))

    def test_denormalize_inverts_normalize(self):
        rng = np.random.default_rng(13)
        items = [LabeledImage(rng.random((4, 4, 3)).astype(np.float32), 0, str(i))
                 for i in range(4)]
        stats = compute_norm_stats(Dataset(items, ["a", "b"]), 4)
        img = items[0].pixels
        np.testing.assert_allclose(denormalize(normalize(img, stats), stats), img,
                                   atol=1e-5)

    def test_empty_dataset_rejected(self):
        with pytest.raises(DatasetError):
            compute_norm_stats(Dataset([], ["a", "b"]), 4)

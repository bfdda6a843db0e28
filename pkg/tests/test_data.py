import os

import numpy as np
import numpy.testing as npt
import pytest
from scipy import ndimage

from evigrade.data import (
    Dataset,
    Samples,
    SyntheticSpec,
    dataset_fingerprint,
    default_count_ranges,
    load_folder_dataset,
    make_synthetic,
    write_dataset,
)
from evigrade.imageqc import laplacian_variance, mean_brightness
from evigrade.utils import stream


def all_samples(ds):
    imgs = np.concatenate([ds.splits[s].images for s in ("train", "val", "test")])
    labs = np.concatenate([ds.splits[s].labels for s in ("train", "val", "test")])
    return imgs, labs


# ---- spec validation ----

class TestSpec:
    def test_default_five_grade_ranges(self):
        assert default_count_ranges(5) == ((0, 0), (2, 4), (7, 10), (14, 18),
                                           (24, 30))

    def test_generated_ranges_are_valid_for_any_grade_count(self):
        for k in range(2, 9):
            ranges = default_count_ranges(k)
            assert len(ranges) == k
            assert ranges[0] == (0, 0)  # base grade is lesion-free
            SyntheticSpec(num_grades=k, images_per_grade=1, side=64,
                          count_ranges=ranges)  # passes validation

    def test_bad_specs_rejected(self):
        with pytest.raises(ValueError):
            SyntheticSpec(num_grades=1)
        with pytest.raises(ValueError):
            SyntheticSpec(images_per_grade=0)
        with pytest.raises(ValueError):
            SyntheticSpec(num_grades=2, count_ranges=((0, 0),))
        with pytest.raises(ValueError):
            SyntheticSpec(num_grades=2, count_ranges=((2, 1), (3, 4)))
        with pytest.raises(ValueError):
            SyntheticSpec(num_grades=2, count_ranges=((-1, 0), (2, 3)))
        # overlapping / non-increasing ranges break the ordinal signal
        with pytest.raises(ValueError):
            SyntheticSpec(num_grades=2, count_ranges=((0, 2), (2, 5)))
        with pytest.raises(ValueError):
            SyntheticSpec(num_grades=2, count_ranges=((3, 5), (1, 8)))


# ---- generation ----

class TestMakeSynthetic:
    def test_counts_and_shapes(self):
        spec = SyntheticSpec(num_grades=3, images_per_grade=20, side=64, seed=2)
        ds = make_synthetic(spec)
        assert len(ds.splits["train"]) == 3 * 14
        assert len(ds.splits["val"]) == 3 * 3
        assert len(ds.splits["test"]) == 3 * 3
        for s in ds.splits.values():
            assert s.images.dtype == np.uint8
            assert s.images.shape[1:] == (64, 64, 3)
            assert len(s.ids) == len(s)
        imgs, labs = all_samples(ds)
        for g in range(3):
            assert (labs == g).sum() == 20  # per-grade counts as requested

    def test_stratified_splits(self):
        spec = SyntheticSpec(num_grades=4, images_per_grade=20, side=64, seed=3)
        ds = make_synthetic(spec)
        for name, per_grade in (("train", 14), ("val", 3), ("test", 3)):
            labs = ds.splits[name].labels
            for g in range(4):
                assert (labs == g).sum() == per_grade

    def test_ids_unique_and_named_by_split(self):
        ds = make_synthetic(SyntheticSpec(num_grades=2, images_per_grade=10,
                                          side=64, seed=4))
        seen = []
        for name, s in ds.splits.items():
            assert all(i.startswith(f"{name}_g") for i in s.ids)
            seen.extend(s.ids)
        assert len(seen) == len(set(seen))

    def test_deterministic_by_seed(self):
        spec = SyntheticSpec(num_grades=2, images_per_grade=6, side=64, seed=5)
        a = make_synthetic(spec)
        b = make_synthetic(spec)
        for name in ("train", "val", "test"):
            npt.assert_array_equal(a.splits[name].images, b.splits[name].images)
            assert a.splits[name].ids == b.splits[name].ids
        c = make_synthetic(SyntheticSpec(num_grades=2, images_per_grade=6,
                                         side=64, seed=6))
        assert not np.array_equal(a.splits["train"].images,
                                  c.splits["train"].images)

    def test_grade_zero_blob_free(self):
        ds = make_synthetic(SyntheticSpec(num_grades=5, images_per_grade=6,
                                          side=128, seed=7))
        imgs, labs = all_samples(ds)
        red = imgs[..., 0].astype(np.float64)
        # the background field tops out well under the lesion intensities
        assert red[labs == 0].max() < 160.0
        for g in (2, 3, 4):
            assert (red[labs == g].max(axis=(1, 2)) > 160.0).all()


class TestOrdinalSignal:
    def test_bright_component_count_increases_with_grade(self):
        # black-box proxy: connected bright regions per image
        ds = make_synthetic(SyntheticSpec(num_grades=5, images_per_grade=30,
                                          side=128, seed=3))
        imgs, labs = all_samples(ds)
        means = []
        for g in range(5):
            counts = []
            for im in imgs[labs == g]:
                mask = im[..., 0] > 150
                lab, n = ndimage.label(mask)
                sizes = ndimage.sum(mask, lab, range(1, n + 1))
                counts.append(int((sizes >= 3).sum()))
            means.append(np.mean(counts))
        assert all(a < b for a, b in zip(means, means[1:]))

    def test_blob_count_means_sit_in_spec_ranges(self):
        # replay of the generator's draw sequence for 200 images per grade;
        # a desynchronized replay would leave the stated range and fail
        spec = SyntheticSpec(num_grades=5, images_per_grade=200, side=32,
                             seed=11)
        means = []
        for g, (lo, hi) in enumerate(spec.count_ranges):
            counts = []
            for i in range(spec.images_per_grade):
                rng = stream(spec.seed, "synth", g, i)
                rng.uniform(-0.02, 0.02)
                rng.uniform(-0.02, 0.02)
                rng.uniform(0.97, 1.03)
                rng.normal(0.0, 1.0, (spec.side, spec.side))
                counts.append(int(rng.integers(lo, hi + 1)))
            assert min(counts) >= lo and max(counts) <= hi
            m = np.mean(counts)
            assert lo <= m <= hi
            means.append(m)
        assert all(a < b for a, b in zip(means, means[1:]))

    def test_generated_images_pass_quality_gate_measures(self):
        ds = make_synthetic(SyntheticSpec(num_grades=5, images_per_grade=5,
                                          side=128, seed=8))
        imgs, _ = all_samples(ds)
        for im in imgs:
            px = im.astype(np.float64)
            assert mean_brightness(px) > 15.0
            assert laplacian_variance(px) > 50.0


# ---- disk roundtrip ----

class TestDiskRoundtrip:
    def test_write_then_load_preserves_everything(self, tmp_path):
        ds = make_synthetic(SyntheticSpec(num_grades=3, images_per_grade=10,
                                          side=64, seed=9))
        root = str(tmp_path / "corpus")
        write_dataset(ds, root)
        for split in ("train", "val", "test"):
            for g in range(3):
                assert os.path.isdir(os.path.join(root, split, str(g)))
        back = load_folder_dataset(root)
        assert back.num_grades == 3
        assert back.side == 64
        for split in ("train", "val", "test"):
            a, b = ds.splits[split], back.splits[split]
            assert len(a) == len(b)
            # loader orders by grade folder then filename; match per grade
            for g in range(3):
                npt.assert_array_equal(
                    np.sort(a.images[a.labels == g], axis=0),
                    np.sort(b.images[b.labels == g], axis=0))

    def test_load_with_resize(self, tmp_path):
        ds = make_synthetic(SyntheticSpec(num_grades=2, images_per_grade=4,
                                          side=64, seed=10))
        root = str(tmp_path / "corpus")
        write_dataset(ds, root)
        back = load_folder_dataset(root, target_side=32)
        assert back.side == 32
        assert back.splits["train"].images.shape[1:] == (32, 32, 3)

    def test_missing_root_rejected(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_folder_dataset(str(tmp_path / "nope"))

    def test_empty_root_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            load_folder_dataset(str(tmp_path))


class TestFingerprint:
    def test_identical_trees_match(self, tmp_path):
        spec = SyntheticSpec(num_grades=2, images_per_grade=4, side=64, seed=12)
        a, b = str(tmp_path / "a"), str(tmp_path / "b")
        write_dataset(make_synthetic(spec), a)
        write_dataset(make_synthetic(spec), b)
        assert dataset_fingerprint(a) == dataset_fingerprint(b)

    def test_changed_file_changes_hash(self, tmp_path):
        spec = SyntheticSpec(num_grades=2, images_per_grade=4, side=64, seed=12)
        root = str(tmp_path / "a")
        write_dataset(make_synthetic(spec), root)
        before = dataset_fingerprint(root)
        victim = os.path.join(root, "train", "0", "img_0000.png")
        with open(victim, "ab") as fh:
            fh.write(b"x")
        assert dataset_fingerprint(root) != before


class TestSamples:
    def test_len(self):
        s = Samples(np.zeros((7, 16, 16, 3), dtype=np.uint8),
                    np.zeros(7, dtype=int), [str(i) for i in range(7)])
        assert len(s) == 7

    def test_dataset_holds_splits(self):
        ds = Dataset({"train": Samples(np.zeros((1, 16, 16, 3), dtype=np.uint8),
                                       np.zeros(1, dtype=int), ["a"])}, 2, 16)
        assert ds.num_grades == 2 and ds.side == 16

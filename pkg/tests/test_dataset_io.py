import numpy as np
import pytest
from scipy.signal import convolve2d

from rmgd.dataset_io import (
    PairDataset,
    gaussian_kernel1d,
    load_pair_list,
    load_patch_source,
    load_patches,
    parse_pair_line,
    preprocess,
    preprocess_batch,
    sample_training_pairs,
    write_patch_dataset,
)
from rmgd.errors import ConfigError, CorruptDatasetError, DataError


def direct_preprocess(raw, k=32, sigma=2.0, size=7):
    """Reference: block average, then a full 2-D convolution on an edge-padded image."""
    f = 64 // k
    small = raw.reshape(k, f, k, f).mean(axis=(1, 3))
    x = np.arange(size) - size // 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    g2 = np.outer(g, g) / np.outer(g, g).sum()
    pad = size // 2
    return convolve2d(np.pad(small, pad, mode="edge"), g2[::-1, ::-1], mode="valid")


@pytest.fixture
def small_dataset(tmp_path, rng):
    patches = rng.integers(0, 256, size=(300, 64, 64), dtype=np.uint8)
    pids = np.repeat(np.arange(100), 3)
    pairs = np.array([[0, 1, 0], [3, 7, 0], [4, 5, 0], [0, 1, 0], [10, 290, 0]])
    root = write_patch_dataset(tmp_path / "ds", patches, pids, {"pairs.txt": pairs})
    return root, patches, pids


class TestSource:
    def test_roundtrip(self, small_dataset):
        root, patches, pids = small_dataset
        src = load_patch_source(root)
        assert src.patch_count == 300
        assert len(src.mosaic_paths) == 2
        assert np.array_equal(src.patch64(0), patches[0])
        assert np.array_equal(src.patch64(299), patches[299])
        assert np.array_equal(src.patches64([5, 260]), patches[[5, 260]])
        assert np.array_equal(src.point_ids, pids)

    def test_missing_mosaic(self, small_dataset):
        root, _, _ = small_dataset
        sorted(root.glob("patches*.bmp"))[-1].unlink()
        with pytest.raises(CorruptDatasetError):
            load_patch_source(root)

    def test_missing_info(self, small_dataset):
        root, _, _ = small_dataset
        (root / "info.txt").unlink()
        with pytest.raises(CorruptDatasetError):
            load_patch_source(root)

    def test_missing_dir(self, tmp_path):
        with pytest.raises(DataError):
            load_patch_source(tmp_path / "nope")


class TestPairs:
    def test_parse_formats(self):
        assert parse_pair_line("1 10 0 2 10 0") == (1, 10, 2, 10)
        assert parse_pair_line("1 10 2 11") == (1, 10, 2, 11)
        with pytest.raises(CorruptDatasetError):
            parse_pair_line("1 2 3 4 5", 9)
        with pytest.raises(CorruptDatasetError):
            parse_pair_line("1 a 3 4")

    def test_load_labels_and_duplicates(self, small_dataset):
        root, _, _ = small_dataset
        src = load_patch_source(root)
        ds = load_pair_list(root / "pairs.txt", src)
        assert len(ds) == 4  # one duplicate line dropped
        assert ds.label.tolist() == [1, 0, 1, 0]
        assert ds.n_match == 2 and ds.n_nonmatch == 2

    def test_inconsistent_point_id(self, small_dataset, tmp_path):
        root, _, _ = small_dataset
        src = load_patch_source(root)
        bad = tmp_path / "bad.txt"
        bad.write_text("0 5 0 1 0 0\n")
        with pytest.raises(DataError):
            load_pair_list(bad, src)

    def test_out_of_range(self, small_dataset, tmp_path):
        root, _, _ = small_dataset
        src = load_patch_source(root)
        bad = tmp_path / "bad.txt"
        bad.write_text("0 0 0 999 333 0\n")
        with pytest.raises(DataError):
            load_pair_list(bad, src)

    def test_sample_ratio_and_determinism(self):
        lab = np.r_[np.ones(50, int), np.zeros(200, int)]
        ds = PairDataset(np.arange(250), np.arange(250) + 1000, lab)
        a = sample_training_pairs(ds, 10, 3.0, seed=4)
        b = sample_training_pairs(ds, 10, 3.0, seed=4)
        assert a.n_match == 10 and a.n_nonmatch == 30
        assert np.array_equal(a.a, b.a)
        assert np.all(np.diff(a.a) > 0)
        with pytest.raises(DataError):
            sample_training_pairs(ds, 60)


class TestPreprocess:
    def test_kernel(self):
        g = gaussian_kernel1d(7, 2.0)
        assert g.sum() == pytest.approx(1.0)
        assert np.allclose(g, g[::-1])
        with pytest.raises(ConfigError):
            gaussian_kernel1d(6, 2.0)

    @pytest.mark.parametrize("k", [32, 16, 64])
    def test_matches_direct_convolution(self, rng, k):
        raw = rng.uniform(0, 255, size=(64, 64))
        out = preprocess(raw, patch_size=k)
        assert out.pixels.shape == (k, k)
        assert np.allclose(out.pixels, direct_preprocess(raw, k), atol=1e-9)

    def test_constant_stays_constant(self):
        out = preprocess_batch(np.full((2, 64, 64), 42.0))
        assert np.allclose(out, 42.0)

    def test_bad_shape(self):
        with pytest.raises(DataError):
            preprocess_batch(np.zeros((1, 32, 32)))

    def test_load_patches_order(self, small_dataset):
        root, patches, _ = small_dataset
        src = load_patch_source(root)
        px = load_patches(src, [7, 3])
        assert np.allclose(px[1], preprocess(patches[3]).pixels)

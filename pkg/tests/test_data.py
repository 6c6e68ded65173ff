import numpy as np
import pytest

from helpers import random_plane
from rdsr.data import (
    DatasetSpec,
    LrHrPair,
    load_dir,
    make_pair,
    patch_stream,
    random_patch,
    toy_dataset,
    toy_image,
)
from rdsr.imaging import ImagePlane, save_image


class TestLrHrPair:
    def test_scale_property(self):
        rng = np.random.default_rng(31)
        pair = make_pair(random_plane(rng, 16, 24), 4)
        assert pair.scale == 4
        assert pair.lr.shape == (4, 6, 3)

    def test_lr_up_must_match_hr_shape(self):
        rng = np.random.default_rng(32)
        hr, lr = random_plane(rng, 16, 16), random_plane(rng, 4, 4)
        with pytest.raises(ValueError, match="lr_up"):
            LrHrPair(hr=hr, lr=lr, lr_up=random_plane(rng, 16, 12))

    def test_non_integer_multiple_rejected(self):
        rng = np.random.default_rng(33)
        hr = random_plane(rng, 15, 15)
        with pytest.raises(ValueError, match="multiple"):
            LrHrPair(hr=hr, lr=random_plane(rng, 4, 4), lr_up=hr)

    def test_anisotropic_scale_rejected(self):
        rng = np.random.default_rng(34)
        hr = random_plane(rng, 16, 16)
        with pytest.raises(ValueError, match="both axes"):
            LrHrPair(hr=hr, lr=random_plane(rng, 4, 8), lr_up=hr)


class TestDatasetSpec:
    def test_patch_must_divide_by_scale(self):
        with pytest.raises(ValueError, match="divisible"):
            DatasetSpec(patch_size=30, scale=4)

    @pytest.mark.parametrize("kwargs", [dict(patch_size=0), dict(scale=0)])
    def test_rejects_nonpositive(self, kwargs):
        with pytest.raises(ValueError):
            DatasetSpec(**kwargs)


class TestMakePair:
    def test_shapes(self):
        rng = np.random.default_rng(35)
        pair = make_pair(random_plane(rng, 32, 48), 4)
        assert pair.hr.shape == (32, 48, 3)
        assert pair.lr.shape == (8, 12, 3)
        assert pair.lr_up.shape == (32, 48, 3)

    def test_scale_one_is_identity(self):
        rng = np.random.default_rng(36)
        hr = random_plane(rng, 8, 8)
        pair = make_pair(hr, 1)
        np.testing.assert_allclose(pair.lr.data, hr.data, atol=1e-12)
        np.testing.assert_allclose(pair.lr_up.data, hr.data, atol=1e-12)

    def test_indivisible_size_rejected(self):
        rng = np.random.default_rng(37)
        with pytest.raises(ValueError, match="divisible"):
            make_pair(random_plane(rng, 15, 16), 4)

    def test_degradation_loses_detail(self):
        # checkerboard at pixel scale cannot survive 4x down/up
        arr = np.indices((16, 16)).sum(axis=0) % 2
        hr = ImagePlane.from_array(arr[..., None].astype(np.float64))
        pair = make_pair(hr, 4)
        assert np.std(pair.lr_up.data) < 0.5 * np.std(hr.data)


class TestRandomPatch:
    def test_offsets_are_scale_aligned(self):
        # encode position in the image so the crop offset can be recovered
        h = w = 24
        base = np.arange(h * w, dtype=np.float64).reshape(h, w) / (h * w)
        src = ImagePlane.from_array(base[..., None])
        spec = DatasetSpec(patch_size=8, scale=4, seed=0)
        rng = np.random.default_rng(38)
        for _ in range(20):
            pair = random_patch(src, spec, rng)
            first = pair.hr.data[0, 0, 0] * (h * w)
            off_y, off_x = int(round(first)) // w, int(round(first)) % w
            assert off_y % 4 == 0 and off_x % 4 == 0
            assert 0 <= off_y <= h - 8 and 0 <= off_x <= w - 8

    def test_offset_distribution_uniform(self):
        # chi-square over the 5x5 grid of legal offsets, fixed seed
        h = w = 24
        src = ImagePlane.from_array(
            (np.arange(h * w, dtype=np.float64).reshape(h, w) / (h * w))[..., None]
        )
        spec = DatasetSpec(patch_size=8, scale=4, seed=0)
        rng = np.random.default_rng(39)
        n_bins = (h - 8) // 4 + 1
        counts = np.zeros((n_bins, n_bins))
        draws = 1000
        for _ in range(draws):
            pair = random_patch(src, spec, rng)
            first = pair.hr.data[0, 0, 0] * (h * w)
            off_y, off_x = int(round(first)) // w, int(round(first)) % w
            counts[off_y // 4, off_x // 4] += 1
        expected = draws / n_bins**2
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        # df = 24; 0.999 quantile ~ 51.18
        assert chi2 < 51.18

    def test_source_smaller_than_patch_rejected(self):
        rng = np.random.default_rng(40)
        spec = DatasetSpec(patch_size=16, scale=4)
        with pytest.raises(ValueError, match="smaller"):
            random_patch(random_plane(rng, 8, 8), spec, np.random.default_rng(0))


class TestToyImages:
    def test_shape_and_range(self):
        img = toy_image(48, np.random.default_rng(41))
        assert img.shape == (48, 48, 3)
        assert float(img.data.min()) >= 0.0
        assert float(img.data.max()) <= 1.0

    def test_deterministic_given_rng_state(self):
        a = toy_image(32, np.random.default_rng(42))
        b = toy_image(32, np.random.default_rng(42))
        np.testing.assert_array_equal(a.data, b.data)

    def test_has_structure(self):
        img = toy_image(64, np.random.default_rng(43))
        assert float(img.data.std()) > 0.05

    def test_dataset_is_seeded_and_varied(self):
        a = toy_dataset(3, 32, seed=1)
        b = toy_dataset(3, 32, seed=1)
        c = toy_dataset(3, 32, seed=2)
        assert len(a) == 3
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.data, y.data)
        assert not np.array_equal(a[0].data, a[1].data)
        assert not np.array_equal(a[0].data, c[0].data)


class TestLoadDir:
    def test_sorted_by_name(self, tmp_path):
        rng = np.random.default_rng(44)
        for name in ("b.png", "a.png", "c.png"):
            save_image(random_plane(rng, 8, 8), tmp_path / name)
        (tmp_path / "notes.txt").write_text("ignored")
        loaded = load_dir(tmp_path)
        assert [name for name, _ in loaded] == ["a.png", "b.png", "c.png"]

    def test_missing_dir(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="directory"):
            load_dir(tmp_path / "nope")


class TestPatchStream:
    def test_deterministic_per_seed_and_worker(self):
        images = toy_dataset(3, 24, seed=5)
        spec = DatasetSpec(patch_size=8, scale=4, seed=9)
        a = [next(patch_stream(images, spec)) for _ in range(1)]
        stream1 = patch_stream(images, spec)
        stream2 = patch_stream(images, spec)
        for _ in range(5):
            p1, p2 = next(stream1), next(stream2)
            np.testing.assert_array_equal(p1.hr.data, p2.hr.data)

    def test_worker_streams_differ(self):
        images = toy_dataset(2, 24, seed=5)
        spec = DatasetSpec(patch_size=8, scale=4, seed=9)
        a = [next(patch_stream(images, spec, worker=0)).hr.data for _ in range(4)]
        b = [next(patch_stream(images, spec, worker=1)).hr.data for _ in range(4)]
        assert any(not np.array_equal(x, y) for x, y in zip(a, b))

    def test_requires_images(self):
        spec = DatasetSpec(patch_size=8, scale=4)
        with pytest.raises(ValueError, match="at least one"):
            next(patch_stream([], spec))

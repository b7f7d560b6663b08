import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curriloc.core import ImageRecord, Pose
from curriloc.effects import EffectSpec, add_gaussian_noise, motion_blur, occlude_columns, perturb_records
from curriloc.errors import ColumnsOutOfRange, EvenKernel


def random_image(seed=0, shape=(32, 128)):
    return np.random.default_rng(seed).integers(0, 256, shape).astype(np.uint8)


def blur_oracle(img, k):
    """Direct circular convolution with a 1/k box, rounded half-to-even."""
    h, w = img.shape
    out = np.zeros_like(img)
    half = k // 2
    for r in range(h):
        for c in range(w):
            total = sum(int(img[r, (c + j) % w]) for j in range(-half, half + 1))
            out[r, c] = int(np.rint(total / k))
    return out


class TestNoise:
    def test_zero_sigma_identity(self):
        img = random_image()
        np.testing.assert_array_equal(add_gaussian_noise(img, 0.0, 1), img)

    def test_sample_deviation(self):
        img = np.full((400, 400), 128, np.uint8)
        diff = add_gaussian_noise(img, 20.0, 3).astype(float) - 128
        assert abs(diff.std() - 20.0) < 1.0

    def test_seeded(self):
        img = random_image()
        np.testing.assert_array_equal(add_gaussian_noise(img, 20, 5), add_gaussian_noise(img, 20, 5))
        assert not np.array_equal(add_gaussian_noise(img, 20, 5), add_gaussian_noise(img, 20, 6))

    def test_range_and_shape(self):
        out = add_gaussian_noise(random_image(), 50.0, 0)
        assert out.dtype == np.uint8 and out.shape == (32, 128)

    def test_negative_sigma(self):
        with pytest.raises(ValueError):
            add_gaussian_noise(random_image(), -1.0, 0)


class TestOcclusion:
    def test_zero_columns_identity(self):
        img = random_image()
        np.testing.assert_array_equal(occlude_columns(img, 0, 17), img)

    def test_full_width(self):
        assert not np.any(occlude_columns(random_image(), 128, 5))

    def test_wraps_at_right_edge(self):
        img = np.full((4, 128), 200, np.uint8)
        out = occlude_columns(img, 64, 128 - 32)
        black = np.flatnonzero(np.all(out == 0, axis=0))
        assert list(black) == list(range(32)) + list(range(96, 128))
        assert np.all(out[:, 32:96] == 200)

    def test_out_of_range(self):
        with pytest.raises(ColumnsOutOfRange):
            occlude_columns(random_image(), 129)
        with pytest.raises(ColumnsOutOfRange):
            occlude_columns(random_image(), -1)


class TestBlur:
    def test_unit_kernel_identity(self):
        img = random_image()
        np.testing.assert_array_equal(motion_blur(img, 1), img)

    @pytest.mark.parametrize("k", [3, 7, 11])
    def test_constant_image(self, k):
        img = np.full((8, 40), 77, np.uint8)
        np.testing.assert_array_equal(motion_blur(img, k), img)

    @pytest.mark.parametrize("k", [3, 7, 11])
    def test_matches_direct_convolution(self, k):
        img = random_image(1, (6, 30))
        np.testing.assert_array_equal(motion_blur(img, k), blur_oracle(img, k))

    def test_even_kernel(self):
        with pytest.raises(EvenKernel):
            motion_blur(random_image(), 4)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 1000), st.sampled_from([3, 5, 7, 11, 21]))
    def test_row_mean_preserved(self, seed, k):
        img = random_image(seed, (5, 64))
        out = motion_blur(img, k).astype(float)
        np.testing.assert_allclose(out.mean(axis=1), img.astype(float).mean(axis=1), atol=0.5)


class TestEffectSpec:
    def test_identity_specs(self):
        img = random_image()
        for spec in (EffectSpec("noise", sigma=0.0), EffectSpec("occlusion", columns=0),
                     EffectSpec("blur", kernel=1)):
            assert spec.is_identity
            np.testing.assert_array_equal(spec.apply(img, 3), img)

    def test_levels(self):
        assert EffectSpec("noise", sigma=20).level == 20
        assert EffectSpec("occlusion", columns=12).level == 12
        assert EffectSpec("blur", kernel=7).level == 7

    def test_seeded_occlusion_start(self):
        img = np.full((2, 50), 9, np.uint8)
        spec = EffectSpec("occlusion", columns=5, seed=4)
        np.testing.assert_array_equal(spec.apply(img, 0), spec.apply(img, 0))
        assert np.sum(spec.apply(img, 0) == 0) == 10

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            EffectSpec("rain")

    def test_perturb_records_drops_stale_features(self):
        rec = ImageRecord("a", "r", "c", Pose(0, 0), pixels=random_image(), features=np.zeros(3))
        out = perturb_records([rec], EffectSpec("noise", sigma=10.0, seed=1))[0]
        assert out.features is None
        assert not np.array_equal(out.pixels, rec.pixels)

import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from curriloc.core import ImageRecord, Pose, cosine, derive_seed, euclidean, normalize
from curriloc.errors import DimensionMismatch, NonFinite, ZeroVector

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


class TestNormalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)

    def test_unit_vector_unchanged(self):
        np.testing.assert_array_equal(normalize([1.0, 0.0, 0.0]), [1.0, 0.0, 0.0])

    def test_zero_vector_rejected(self):
        with pytest.raises(ZeroVector):
            normalize([0.0, 0.0])

    def test_non_finite_rejected(self):
        with pytest.raises(NonFinite):
            normalize([np.nan, 1.0])

    def test_does_not_mutate_input(self):
        v = np.array([3.0, 4.0])
        normalize(v)
        np.testing.assert_array_equal(v, [3.0, 4.0])

    @given(arrays(np.float64, st.integers(1, 32), elements=finite))
    def test_unit_norm_and_idempotent(self, v):
        if np.linalg.norm(v) < 1e-6:
            return
        u = normalize(v)
        assert abs(np.linalg.norm(u) - 1.0) < 1e-9
        np.testing.assert_array_equal(normalize(u), u)


class TestDistances:
    def test_identity(self):
        a = normalize([1.0, 2.0, 3.0])
        assert euclidean(a, a) == 0.0
        assert cosine(a, a) == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal_unit_vectors(self):
        assert euclidean([1.0, 0.0], [0.0, 1.0]) == pytest.approx(math.sqrt(2), abs=1e-15)
        assert cosine([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_antipodal(self):
        a = normalize([0.3, -0.2, 0.9])
        assert cosine(a, -a) == pytest.approx(-1.0, abs=1e-15)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            euclidean([1.0, 0.0], [1.0, 0.0, 0.0])
        with pytest.raises(DimensionMismatch):
            cosine([1.0], [1.0, 0.0])

    def test_cosine_clamped(self):
        a = np.array([1.0 + 1e-15, 0.0])
        assert cosine(a, a) <= 1.0

    def test_unit_sphere_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(500):
            a, b = (normalize(rng.standard_normal(16)) for _ in range(2))
            assert abs(euclidean(a, b) ** 2 - (2 - 2 * cosine(a, b))) < 1e-10

    @settings(max_examples=50)
    @given(arrays(np.float64, 8, elements=finite), arrays(np.float64, 8, elements=finite))
    def test_symmetry(self, a, b):
        assert euclidean(a, b) == euclidean(b, a)
        assert cosine(a, b) == cosine(b, a)


class TestRecords:
    def test_pose_distance(self):
        assert Pose(0.0, 0.0).distance(Pose(3.0, 4.0)) == 5.0

    def test_pose_rejects_nan(self):
        with pytest.raises(NonFinite):
            Pose(float("nan"), 0.0)

    def test_record_equality_compares_arrays(self):
        px = np.zeros((2, 3), np.uint8)
        a = ImageRecord("a", "r", "c", Pose(0, 0), px)
        assert a == ImageRecord("a", "r", "c", Pose(0, 0), px.copy())
        assert a != a.replace(pixels=np.ones((2, 3), np.uint8))

    def test_record_validation(self):
        with pytest.raises(ValueError):
            ImageRecord("a", "", "c", Pose(0, 0))
        with pytest.raises(ValueError):
            ImageRecord("a", "r", "c", Pose(0, 0), np.zeros((2, 2), np.float64))


class TestDeriveSeed:
    def test_matches_documented_rule(self):
        digest = hashlib.sha256(b"7:mining").digest()
        assert derive_seed(7, "mining") == int.from_bytes(digest[:8], "little") >> 1

    def test_roles_are_decoupled(self):
        seeds = {derive_seed(0, r) for r in ("mining", "init", "effects", "splits")}
        assert len(seeds) == 4
        assert all(0 <= s < 2 ** 63 for s in seeds)

import struct

import numpy as np
import pytest

from curriloc.encoder import (EncoderParams, _backward, _forward, encoder_backward, encoder_forward,
                              encoder_init, featurize, load_checkpoint, read_layers, save_checkpoint,
                              sgd_step, write_layers)
from curriloc.errors import FormatVersionError, InvalidShape, ParseError, ShapeMismatch
from oracles import central_difference, max_relative_error


def small(seed=0):
    return encoder_init((6, 8, 4), seed)


class TestInit:
    def test_seeded(self):
        assert encoder_init((10, 7, 3), 5).equals(encoder_init((10, 7, 3), 5))
        assert not encoder_init((10, 7, 3), 5).equals(encoder_init((10, 7, 3), 6))

    def test_biases_zero_and_bounds(self):
        p = encoder_init((1024, 256, 64, 64), 0)
        assert all(np.all(b == 0) for b in p.biases)
        for w in p.weights:
            assert np.max(np.abs(w)) <= 1.0 / np.sqrt(w.shape[1])
        assert p.shape == (1024, 256, 64, 64)

    def test_bad_shapes(self):
        with pytest.raises(InvalidShape):
            encoder_init((5,), 0)
        with pytest.raises(InvalidShape):
            EncoderParams([np.zeros((3, 2)), np.zeros((2, 4))], [np.zeros(3), np.zeros(2)])


class TestForward:
    def test_unit_norm(self):
        p = small()
        x = np.random.default_rng(1).standard_normal((50, 6))
        np.testing.assert_allclose(np.linalg.norm(encoder_forward(p, x), axis=1), 1.0, atol=1e-9)

    def test_constant_network(self):
        p = small()
        for w in p.weights:
            w[:] = 0.0
        p.biases[-1][:] = [3.0, 0.0, 4.0, 0.0]
        x = np.random.default_rng(2).standard_normal((5, 6))
        np.testing.assert_allclose(encoder_forward(p, x), np.tile([0.6, 0.0, 0.8, 0.0], (5, 1)), atol=1e-15)

    def test_single_vector_matches_batch_row(self):
        p = small()
        x = np.random.default_rng(3).standard_normal((4, 6))
        np.testing.assert_allclose(encoder_forward(p, x[2]), encoder_forward(p, x)[2], atol=1e-14)

    def test_deterministic(self):
        p = small()
        x = np.random.default_rng(4).standard_normal((3, 6))
        np.testing.assert_array_equal(encoder_forward(p, x), encoder_forward(p, x * 1.0))

    def test_width_mismatch(self):
        with pytest.raises(ShapeMismatch):
            encoder_forward(small(), np.zeros((2, 5)))


class TestBackward:
    def test_zero_upstream(self):
        p = small()
        g = encoder_backward(p, np.ones((3, 6)), np.zeros((3, 4)))
        assert all(not np.any(a) for a in g.arrays())

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            p = encoder_init((6, 8, 4), int(rng.integers(1000)))
            for b in p.biases:
                b[:] = rng.normal(0, 0.1, b.shape)
            x = rng.standard_normal((3, 6))
            c = rng.standard_normal((3, 4))
            analytic = encoder_backward(p, x, c).arrays()
            numeric = central_difference(lambda: float(np.sum(c * encoder_forward(p, x))), p.arrays())
            assert max_relative_error(analytic, numeric) < 1e-4

    def test_duplicated_input_contributions_add(self):
        p = small(7)
        rng = np.random.default_rng(8)
        x = rng.standard_normal(6)
        g1, g2 = rng.standard_normal((2, 4))
        both = encoder_backward(p, np.stack([x, x]), np.stack([g1, g2]))
        one = encoder_backward(p, x[None], g1[None])
        two = encoder_backward(p, x[None], g2[None])
        for s, a, b in zip(both.arrays(), one.arrays(), two.arrays()):
            np.testing.assert_allclose(s, a + b, atol=1e-14)

    def test_cached_path_matches_public_path(self):
        p = small(9)
        x = np.random.default_rng(9).standard_normal((4, 6))
        g = np.random.default_rng(10).standard_normal((4, 4))
        _, cache = _forward(p, x)
        assert _backward(p, cache, g).equals(encoder_backward(p, x, g))

    def test_upstream_shape_checked(self):
        with pytest.raises(ShapeMismatch):
            encoder_backward(small(), np.zeros((2, 6)), np.zeros((2, 3)))


class TestSGD:
    def test_zero_rate_is_identity(self):
        p = small()
        g = encoder_backward(p, np.ones((2, 6)), np.ones((2, 4)))
        assert sgd_step(p, g, 0.0).equals(p)

    def test_one_step_arithmetic(self):
        p = EncoderParams([np.array([[1.0]])], [np.array([0.0])])
        g = EncoderParams([np.array([[0.5]])], [np.array([0.0])])
        assert sgd_step(p, g, 0.001).weights[0][0, 0] == pytest.approx(0.9995, abs=1e-15)

    def test_two_steps_compose(self):
        p = small()
        g = encoder_backward(p, np.ones((2, 6)), np.ones((2, 4)))
        twice = sgd_step(sgd_step(p, g, 0.01), g, 0.01)
        for t, a, b in zip(twice.arrays(), p.arrays(), g.arrays()):
            np.testing.assert_allclose(t, a - 2 * 0.01 * b, atol=1e-15)

    def test_negative_rate(self):
        p = small()
        with pytest.raises(ValueError):
            sgd_step(p, p, -0.1)


class TestFeaturize:
    def test_block_means(self):
        img = np.arange(32 * 128, dtype=np.uint8).reshape(32, 128) % 251
        f = featurize(img, (16, 64)).reshape(16, 64)
        blocks = img.astype(float).reshape(16, 2, 64, 2).mean(axis=(1, 3)) / 255.0
        np.testing.assert_allclose(f, blocks, atol=1e-15)

    def test_uneven_bins_shape_and_range(self):
        img = np.random.default_rng(0).integers(0, 256, (30, 100)).astype(np.uint8)
        f = featurize(img, (7, 9))
        assert f.shape == (63,)
        assert 0.0 <= f.min() and f.max() <= 1.0

    def test_constant_image(self):
        f = featurize(np.full((32, 128), 51, np.uint8))
        np.testing.assert_allclose(f, 0.2, atol=1e-15)


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        p = encoder_init((12, 5, 3), 1)
        save_checkpoint(p, tmp_path / "m.mloc")
        assert load_checkpoint(tmp_path / "m.mloc").equals(p)

    def test_layout(self, tmp_path):
        w, b = np.array([[1.0, 2.0]]), np.array([3.0])
        write_layers(tmp_path / "m.mloc", [(w, b)])
        data = (tmp_path / "m.mloc").read_bytes()
        assert data[:4] == b"MLOC"
        assert struct.unpack("<IIII", data[4:20]) == (1, 1, 1, 2)
        assert struct.unpack("<3d", data[20:]) == (1.0, 2.0, 3.0)

    def test_unknown_version(self, tmp_path):
        path = tmp_path / "m.mloc"
        save_checkpoint(small(), path)
        data = bytearray(path.read_bytes())
        data[4:8] = struct.pack("<I", 2)
        path.write_bytes(bytes(data))
        with pytest.raises(FormatVersionError):
            load_checkpoint(path)

    @pytest.mark.parametrize("cut", [2, 10, 30, -1])
    def test_truncated(self, tmp_path, cut):
        path = tmp_path / "m.mloc"
        save_checkpoint(small(), path)
        path.write_bytes(path.read_bytes()[:cut])
        with pytest.raises(ParseError):
            read_layers(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "m.mloc"
        save_checkpoint(small(), path)
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(ParseError):
            read_layers(path)

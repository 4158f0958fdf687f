from __future__ import annotations

import numpy as np
import pytest

from conftest import random_latent
from reference import naive_box_mean, naive_channel_mean_std

from lfa.core import (
    LatentTensor,
    PoolingFilterSpec,
    as_latent,
    channel_mean_std,
    decompose,
    load_latent,
    low_pass,
    save_latent,
)
from lfa.errors import LatentFormatError


class TestLatentTensor:
    def test_rejects_non_3d(self):
        with pytest.raises(LatentFormatError):
            LatentTensor(np.zeros((4, 4), dtype=np.float32))

    def test_rejects_non_float32(self):
        with pytest.raises(LatentFormatError):
            LatentTensor(np.zeros((1, 2, 2), dtype=np.float64))

    def test_shape_properties(self):
        t = LatentTensor.zeros((3, 5, 7))
        assert (t.channels, t.height, t.width) == (3, 5, 7)

    def test_as_latent_downcasts_float64(self):
        t = as_latent(np.ones((1, 2, 2)))
        assert t.data.dtype == np.float32

    def test_as_latent_rejects_integers(self):
        with pytest.raises(LatentFormatError):
            as_latent(np.ones((1, 2, 2), dtype=np.int32))


class TestFileRoundTrip:
    def test_zero_tensor_round_trip(self, tmp_path):
        t = LatentTensor.zeros((32, 64, 64))
        path = tmp_path / "z.npy"
        save_latent(t, path)
        back = load_latent(path)
        assert back.shape == (32, 64, 64)
        assert np.array_equal(back.data, t.data)

    def test_randomized_round_trip_bitwise(self, rng, tmp_path):
        path = tmp_path / "t.npy"
        for _ in range(50):
            shape = (int(rng.integers(1, 8)), int(rng.integers(1, 32)), int(rng.integers(1, 32)))
            t = random_latent(rng, shape, scale=float(rng.uniform(0.1, 100)))
            save_latent(t, path)
            back = load_latent(path)
            assert back.data.tobytes() == t.data.tobytes()

    def test_expected_shape_mismatch(self, tmp_path):
        path = tmp_path / "t.npy"
        save_latent(LatentTensor.zeros((32, 64, 64)), path)
        with pytest.raises(LatentFormatError, match="expected"):
            load_latent(path, expected_shape=(16, 64, 64))

    def test_save_to_unwritable_path(self):
        with pytest.raises(OSError):
            save_latent(LatentTensor.zeros((1, 1, 1)), "/nonexistent-dir/x.npy")

    def test_rejects_non_npy(self, tmp_path):
        path = tmp_path / "junk.npy"
        path.write_bytes(b"not a numpy file at all")
        with pytest.raises(LatentFormatError):
            load_latent(path)

    def test_rejects_wrong_dtype(self, tmp_path):
        path = tmp_path / "f64.npy"
        np.save(path, np.zeros((1, 2, 2), dtype=np.float64))
        with pytest.raises(LatentFormatError, match="float32"):
            load_latent(path)

    def test_rejects_non_3d_file(self, tmp_path):
        path = tmp_path / "2d.npy"
        np.save(path, np.zeros((4, 4), dtype=np.float32))
        with pytest.raises(LatentFormatError, match="3-d"):
            load_latent(path)

    def test_rejects_fortran_order(self, tmp_path):
        path = tmp_path / "f.npy"
        np.save(path, np.asfortranarray(np.arange(24, dtype=np.float32).reshape(2, 3, 4)))
        with pytest.raises(LatentFormatError, match="Fortran"):
            load_latent(path)

    def test_rejects_non_finite(self, tmp_path):
        path = tmp_path / "nan.npy"
        arr = np.zeros((1, 2, 2), dtype=np.float32)
        arr[0, 0, 0] = np.nan
        np.save(path, arr)
        with pytest.raises(LatentFormatError, match="non-finite"):
            load_latent(path)

    def test_rejects_truncated_payload(self, tmp_path):
        path = tmp_path / "t.npy"
        save_latent(LatentTensor.zeros((2, 4, 4)), path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(LatentFormatError, match="truncated"):
            load_latent(path)

    def test_rejects_trailing_bytes(self, tmp_path):
        path = tmp_path / "t.npy"
        save_latent(LatentTensor.zeros((2, 4, 4)), path)
        with open(path, "ab") as fp:
            fp.write(b"\x00\x00")
        with pytest.raises(LatentFormatError, match="trailing"):
            load_latent(path)


class TestChannelMeanStd:
    def test_constant_tensor(self):
        t = LatentTensor(np.full((3, 4, 5), 3.5, dtype=np.float32))
        stats = channel_mean_std(t)
        assert np.allclose(stats.means, 3.5)
        assert np.allclose(stats.stds, 0.0)

    def test_two_value_channel(self):
        t = LatentTensor(np.array([[[1.0, 3.0]]], dtype=np.float32))
        stats = channel_mean_std(t)
        assert stats.means[0] == pytest.approx(2.0)
        assert stats.stds[0] == pytest.approx(1.0)

    def test_matches_naive_loops(self, rng):
        t = random_latent(rng, (4, 8, 8), scale=2.5, offset=-1.0)
        stats = channel_mean_std(t)
        means, stds = naive_channel_mean_std(t.data)
        assert np.max(np.abs(stats.means - means)) < 1e-6
        assert np.max(np.abs(stats.stds - stds)) < 1e-6

    def test_centering_zeroes_means(self, rng):
        t = random_latent(rng, (6, 12, 10), scale=3.0, offset=5.0)
        stats = channel_mean_std(t)
        centered = LatentTensor(
            (t.data - stats.means[:, None, None].astype(np.float32)).astype(np.float32)
        )
        assert np.max(np.abs(channel_mean_std(centered).means)) < 1e-6


class TestLowPass:
    def test_constant_preserved_exactly(self):
        t = LatentTensor(np.full((2, 10, 11), np.float32(0.1), dtype=np.float32))
        out = low_pass(t, PoolingFilterSpec(window=9))
        assert np.array_equal(out.data, t.data)

    def test_impulse_row_hand_example(self):
        t = LatentTensor(np.array([[[0, 0, 5, 0, 0]]], dtype=np.float32))
        out = low_pass(t, PoolingFilterSpec(window=3))
        expected = np.array([[[0.0, 5 / 3, 5 / 3, 5 / 3, 0.0]]], dtype=np.float32)
        assert np.allclose(out.data, expected, atol=1e-7)

    @pytest.mark.parametrize("window", [3, 5, 9])
    def test_matches_naive_windowed_mean(self, rng, window):
        t = random_latent(rng, (2, 16, 16))
        out = low_pass(t, PoolingFilterSpec(window=window))
        ref = naive_box_mean(t.data, window)
        assert np.max(np.abs(out.data.astype(np.float64) - ref)) < 1e-5

    def test_mean_shift_covariance(self, rng):
        t = random_latent(rng, (2, 12, 12))
        shifted = LatentTensor(t.data + np.float32(2.5))
        spec = PoolingFilterSpec(window=5)
        a = low_pass(shifted, spec).data
        b = low_pass(t, spec).data + np.float32(2.5)
        assert np.max(np.abs(a - b)) < 1e-6

    def test_window_must_be_odd(self):
        with pytest.raises(ValueError):
            PoolingFilterSpec(window=4)

    def test_padding_is_half_window(self):
        assert PoolingFilterSpec(window=9).padding == 4


class TestDecompose:
    def test_zero_tensor(self):
        d = decompose(LatentTensor.zeros((2, 8, 8)))
        assert not d.low.data.any()
        assert not d.high.any()

    def test_constant_tensor_all_low(self):
        t = LatentTensor(np.full((1, 8, 8), np.float32(1.25), dtype=np.float32))
        d = decompose(t)
        assert np.array_equal(d.low.data, t.data)
        assert np.max(np.abs(d.high)) == 0.0

    def test_recombination_exact(self, rng):
        for _ in range(20):
            shape = (int(rng.integers(1, 8)), int(rng.integers(1, 48)), int(rng.integers(1, 48)))
            t = random_latent(rng, shape, scale=float(rng.uniform(0.01, 50)))
            d = decompose(t, PoolingFilterSpec(window=9))
            recombined = d.low.data.astype(np.float64) + d.high
            assert np.max(np.abs(recombined - t.data.astype(np.float64))) == 0.0
            assert np.array_equal(d.recombine().data, t.data)

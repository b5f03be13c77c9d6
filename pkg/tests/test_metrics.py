"""Tests for PSNR and SSIM."""

import math

import numpy as np
import pytest

from src.nlosltm.errors import DimensionError
from src.nlosltm.metrics import SSIM_K1, SSIM_K2, gaussian_window, psnr, ssim, ssim_map


def _naive_ssim(a, b, data_range=1.0):
    w = gaussian_window()
    k = w.shape[0]
    c1, c2 = (SSIM_K1 * data_range) ** 2, (SSIM_K2 * data_range) ** 2
    vals = []
    for i in range(a.shape[0] - k + 1):
        for j in range(a.shape[1] - k + 1):
            pa, pb = a[i:i + k, j:j + k], b[i:i + k, j:j + k]
            mu_a, mu_b = np.sum(w * pa), np.sum(w * pb)
            va = np.sum(w * (pa - mu_a) ** 2)
            vb = np.sum(w * (pb - mu_b) ** 2)
            cov = np.sum(w * (pa - mu_a) * (pb - mu_b))
            vals.append(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                        / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


class TestPsnr:
    def test_identical_is_inf(self):
        img = np.random.default_rng(0).uniform(size=(8, 8))
        assert psnr(img, img) == math.inf

    def test_twenty_db(self):
        assert psnr(np.zeros((4, 4)), np.full((4, 4), 0.1)) == pytest.approx(20.0)

    def test_matches_definition(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(size=(16, 16, 3)), rng.uniform(size=(16, 16, 3))
        mse = np.mean((a - b) ** 2)
        assert psnr(a, b) == pytest.approx(10 * math.log10(1.0 / mse), rel=1e-12)

    def test_peak(self):
        assert psnr(np.zeros(4), np.full(4, 25.5), peak=255.0) == pytest.approx(20.0)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))


class TestSsim:
    def test_window_normalized(self):
        w = gaussian_window()
        assert w.shape == (11, 11)
        assert w.sum() == pytest.approx(1.0)
        assert np.allclose(w, w.T)

    def test_identity(self):
        img = np.random.default_rng(2).uniform(size=(16, 16))
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_symmetric(self):
        rng = np.random.default_rng(3)
        a, b = rng.uniform(size=(16, 16)), rng.uniform(size=(16, 16))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
        assert ssim(a, b) < 0.5

    def test_constant_images_closed_form(self):
        p, q = 0.3, 0.7
        c1 = (SSIM_K1 * 1.0) ** 2
        expected = (2 * p * q + c1) / (p * p + q * q + c1)
        assert ssim(np.full((12, 12), p), np.full((12, 12), q)) == pytest.approx(expected, rel=1e-6)

    def test_matches_naive_windows(self):
        rng = np.random.default_rng(4)
        a = rng.uniform(size=(14, 13))
        b = np.clip(a + rng.normal(0, 0.1, size=a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(_naive_ssim(a, b), abs=1e-10)

    def test_map_is_valid_region(self):
        assert ssim_map(np.zeros((16, 20)), np.zeros((16, 20))).shape == (6, 10)

    def test_color_uses_channel_mean(self):
        rng = np.random.default_rng(5)
        a, b = rng.uniform(size=(16, 16, 3)), rng.uniform(size=(16, 16, 3))
        assert ssim(a, b) == pytest.approx(ssim(a.mean(axis=2), b.mean(axis=2)))

    def test_too_small(self):
        with pytest.raises(DimensionError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

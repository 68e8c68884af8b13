import numpy as np
import pytest

from flowdeblur.blur import BlurConfig, reblur
from flowdeblur.metrics import psnr, ssim
from flowdeblur.synth import make_texture


def test_psnr_identical_is_infinite():
    a = make_texture(16, 16, seed=0)
    assert psnr(a, a) == float("inf")


def test_psnr_constant_difference():
    a = np.full((1, 3, 8, 8), 0.3)
    b = np.full((1, 3, 8, 8), 0.4)
    # MSE = 0.01 -> 20 dB
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)


def test_psnr_dim_mismatch_and_range():
    a = np.zeros((1, 3, 8, 8))
    with pytest.raises(ValueError):
        psnr(a, np.zeros((1, 3, 8, 9)))
    with pytest.raises(ValueError):
        psnr(a, np.full((1, 3, 8, 8), 1.5))


def test_psnr_symmetry():
    a = make_texture(16, 16, seed=1)
    b = make_texture(16, 16, seed=2)
    assert psnr(a, b) == pytest.approx(psnr(b, a), abs=1e-9)


def test_ssim_identical_is_exactly_one():
    a = make_texture(24, 24, seed=3)
    assert ssim(a, a) == 1.0


def test_ssim_symmetry():
    a = make_texture(24, 24, seed=4)
    b = make_texture(24, 24, seed=5)
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-9)


def test_ssim_inverted_binary_is_negative():
    rng = np.random.default_rng(6)
    a = (rng.random((1, 1, 32, 32)) > 0.5).astype(np.float64)
    assert ssim(a, 1.0 - a) < 0.0


def test_ssim_window_size_guard():
    a = np.zeros((1, 1, 8, 8))
    with pytest.raises(ValueError):
        ssim(a, a)


def test_blur_lowers_ssim_monotonically():
    sharp = make_texture(48, 48, seed=7)
    scores = []
    for mag in (2.0, 5.0, 10.0):
        flow = np.zeros((1, 2, 48, 48), dtype=np.float32)
        flow[:, 0] = mag
        blurred = np.clip(reblur(sharp, flow, BlurConfig()), 0.0, 1.0)
        scores.append(ssim(blurred, sharp))
    assert scores[0] > scores[1] > scores[2]


def test_ssim_matches_skimage_reference():
    pytest.importorskip("skimage")
    from skimage.metrics import structural_similarity
    rng = np.random.default_rng(8)
    a = make_texture(40, 40, seed=9)
    b = np.clip(a + 0.1 * rng.standard_normal(a.shape), 0.0, 1.0).astype(np.float64)
    mine = ssim(a, b)
    luma = lambda t: (0.299 * t[0, 0] + 0.587 * t[0, 1] + 0.114 * t[0, 2])
    ref = structural_similarity(luma(a.astype(np.float64)), luma(b),
                                win_size=11, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False, data_range=1.0)
    assert mine == pytest.approx(ref, abs=1e-7)

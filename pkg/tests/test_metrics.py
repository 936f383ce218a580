"""Tests for PSNR, PU-PSNR, SSIM and the outlier count."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdrfield import metrics
from hdrfield.errors import DataError


def test_psnr_examples():
    a = np.zeros((4, 4))
    assert metrics.psnr(a, a) == 99.0
    assert metrics.psnr(a, a + 0.1) == pytest.approx(20.0)
    assert metrics.psnr(a, a + 1.0, peak=10.0) == pytest.approx(20.0)


def test_shape_mismatch():
    with pytest.raises(DataError):
        metrics.rmse(np.zeros(3), np.zeros(4))


def test_pu21_reference_values():
    assert float(metrics.pu_encode(1e4)) == pytest.approx(595.39, abs=0.01)
    # clamping below the visible range
    assert metrics.pu_encode(1e-9) == metrics.pu_encode(metrics.PU_MIN)


@pytest.mark.parametrize("enc,var", [("pu21", "banding_glare"), ("pu21", "banding"), ("log2", None)])
def test_pu_encoding_monotone(enc, var):
    y = np.logspace(np.log10(metrics.PU_MIN), 4, 500)
    v = metrics.pu_encode(y, enc, var or "banding_glare")
    assert np.all(np.diff(v) > 0)


def test_pu_psnr_identical_is_ceiling():
    img = np.random.default_rng(0).uniform(0, 50, (8, 16, 3))
    assert metrics.pu_psnr(img, img) == 99.0


def test_pu_psnr_rejects_negative():
    with pytest.raises(DataError):
        metrics.pu_psnr(-np.ones((2, 2, 3)), np.ones((2, 2, 3)))


def test_pu_psnr_log2_fallback_scaling():
    # doubling every luminance shifts log2 codes by 1, so the score barely moves
    rng = np.random.default_rng(1)
    ref = rng.uniform(0.5, 20, (16, 32, 3))
    pred = ref * rng.uniform(0.9, 1.1, ref.shape)
    cfg = metrics.MetricConfig(pu_encoding="log2")
    assert abs(metrics.pu_psnr(pred, ref, cfg) - metrics.pu_psnr(2 * pred, 2 * ref, cfg)) < 1.5


def test_metric_config_validation():
    with pytest.raises(ValueError):
        metrics.MetricConfig(luminance_scale=0)
    with pytest.raises(ValueError):
        metrics.MetricConfig(pu_encoding="pq")


img_pairs = st.integers(0, 2 ** 31).map(lambda s: np.random.default_rng(s).uniform(0, 9, (2, 6, 12, 3)))


@settings(max_examples=30, deadline=None)
@given(img_pairs)
def test_metrics_symmetric_in_error(pair):
    a, b = pair
    assert metrics.rmse(a, b) == pytest.approx(metrics.rmse(b, a))
    assert metrics.pu_psnr(a, b) == pytest.approx(metrics.pu_psnr(b, a))
    assert metrics.ssim(a / 9, b / 9) == pytest.approx(metrics.ssim(b / 9, a / 9))


def test_log_psnr_example():
    ref = np.full((2, 2, 3), np.e - 1)
    pred = np.full((2, 2, 3), np.e ** 0.9 - 1)
    assert metrics.log_psnr(pred, ref) == pytest.approx(20.0)


def test_ssim_examples():
    rng = np.random.default_rng(2)
    b = rng.uniform(size=(16, 32, 3))
    assert metrics.ssim(b, b) == pytest.approx(1.0)
    assert metrics.ssim(b, 1 - b) < -0.5
    assert 0 < metrics.ssim(b, np.clip(b + rng.normal(0, 0.1, b.shape), 0, 1)) < 1


def test_ssim_wraps_in_azimuth():
    rng = np.random.default_rng(3)
    a = rng.uniform(size=(16, 32, 3))
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    assert metrics.ssim(np.roll(a, 5, axis=1), np.roll(b, 5, axis=1)) == pytest.approx(metrics.ssim(a, b))


def test_luminance_weights():
    assert metrics.luminance(np.ones((1, 1, 3)))[0, 0] == pytest.approx(1.0)
    assert metrics.luminance(np.array([[[0, 1.0, 0]]]))[0, 0] == pytest.approx(0.7152)


def test_outlier_count():
    ref = np.ones((10, 10, 3))
    pred = ref * np.exp(np.random.default_rng(4).normal(0, 0.01, ref.shape))
    pred[2, 3] = 50.0
    pred[7, 1] = 0.0
    assert metrics.outlier_count(pred, ref) == 2
    assert metrics.outlier_count(ref, ref) == 0


def test_mse_1e4_is_40db():
    a = np.zeros(100)
    b = np.full(100, 0.01)
    assert metrics.psnr(a, b) == pytest.approx(40.0, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(m1=st.floats(1e-8, 1.0), ratio=st.floats(1.001, 100.0))
def test_psnr_strictly_decreasing_in_mse(m1, ratio):
    a = np.zeros(4)
    assert metrics.psnr(a, np.full(4, np.sqrt(m1))) > metrics.psnr(a, np.full(4, np.sqrt(m1 * ratio)))


def test_pu_psnr_falls_as_noise_grows():
    rng = np.random.default_rng(6)
    ref = rng.lognormal(0.0, 1.5, (32, 64, 3))
    noise = rng.standard_normal(ref.shape)
    scores = [metrics.pu_psnr(ref * np.exp(s * noise), ref) for s in (0.01, 0.05, 0.2, 0.8)]
    assert all(x > y for x, y in zip(scores, scores[1:]))

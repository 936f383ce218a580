"""Tests for linearization, fusion, augmentation, uplift models and losses."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdrfield import hdr, prt
from hdrfield.errors import DataError
from hdrfield.hdr import training
from hdrfield.net import gradcheck
from hdrfield.net import tape as T
from hdrfield.synth import ExposureStack, make_bracket


@pytest.mark.parametrize("v,expect", [(1.0, 1.0), (0.0, 0.0), (0.533, 0.25)])
def test_linearize(v, expect):
    out = hdr.linearize(np.full((1, 2, 3), v), hdr.ResponseCurve(2.2))
    assert out == pytest.approx(np.full((1, 2, 3), expect), abs=2e-3)


def test_linearize_rejects_out_of_range():
    with pytest.raises(DataError):
        hdr.linearize(np.full((1, 2, 3), 1.5), hdr.ResponseCurve())


def test_curve_gain_per_channel():
    c = hdr.ResponseCurve(1.0, gain=[1, 2, 4])
    assert hdr.linearize(np.full((1, 1, 3), 0.5), c)[0, 0] == pytest.approx([0.5, 1.0, 2.0])
    assert c.encode(c.linearize(np.full((1, 1, 3), 0.3))) == pytest.approx(np.full((1, 1, 3), 0.3))


def _stack(frames, stops):
    return ExposureStack(np.array(stops, float), [np.full((1, 2, 3), f) for f in frames], 1.0)


def test_fuse_consistent_readings():
    out = hdr.fuse_exposures(_stack([0.2, 0.4], [-1, 0]), hdr.ResponseCurve(1.0))
    assert out == pytest.approx(np.full((1, 2, 3), 0.4))


def test_fuse_skips_saturated():
    out = hdr.fuse_exposures(_stack([0.6, 1.0], [-1, 0]), hdr.ResponseCurve(1.0))
    assert out == pytest.approx(np.full((1, 2, 3), 1.2))


def test_fuse_falls_back_to_shortest():
    out = hdr.fuse_exposures(_stack([1.0, 1.0], [-1, 0]), hdr.ResponseCurve(1.0))
    assert out == pytest.approx(np.full((1, 2, 3), 2.0))


def test_fuse_empty_stack():
    with pytest.raises(DataError):
        hdr.fuse_exposures(ExposureStack(np.array([]), [], 1.0), hdr.ResponseCurve())


def test_fuse_recovers_bracketed_radiance():
    pano = np.random.default_rng(0).lognormal(0, 3, (8, 16, 3))
    st = make_bracket(pano, 11, 22, gamma=2.2)
    fused = hdr.fuse_exposures(st, hdr.ResponseCurve(2.2))
    seen = np.any([(f > 0.005) & (f < 0.995) for f in st.frames], axis=0)
    assert seen.mean() > 0.9
    assert np.max(np.abs(fused / pano - 1)[seen]) < 0.01


def test_fuse_exposure_equivariance():
    pano = np.random.default_rng(1).lognormal(0, 2, (4, 8, 3))
    st = make_bracket(pano, 5, 8)
    shifted = ExposureStack(st.stops + 1, st.frames, st.gamma)
    c = hdr.ResponseCurve(2.2)
    assert np.array_equal(hdr.fuse_exposures(shifted, c) * 2, hdr.fuse_exposures(st, c))


@pytest.mark.parametrize("px,expect", [((0.2, 0.2, 0.2), 0.0), ((1, 1, 1), 1.0),
                                       ((0.95, 0.1, 0.1), 0.5)])
def test_saturation_mask(px, expect):
    assert hdr.saturation_mask(np.array([[px]]), 0.9)[0, 0] == pytest.approx(expect)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=3, max_size=3), st.floats(0, 1), st.integers(0, 2))
def test_saturation_mask_monotone(px, bump, ch):
    a = np.array([[px]])
    b = a.copy()
    b[0, 0, ch] = max(b[0, 0, ch], bump)
    assert hdr.saturation_mask(b)[0, 0] >= hdr.saturation_mask(a)[0, 0]


def test_uplift_unsaturated_is_linearize():
    ldr = np.random.default_rng(0).uniform(0, 0.85, (8, 16, 3))
    c = hdr.ResponseCurve()
    for model in (hdr.ParametricUplift(), hdr.LearnedUplift()):
        assert np.array_equal(hdr.uplift(model, ldr, c), hdr.linearize(ldr, c).astype(np.float32))


def test_parametric_boundary_boost():
    model = hdr.ParametricUplift(max_boost=16)
    out = hdr.uplift(model, np.ones((1, 2, 3)), hdr.ResponseCurve())
    assert out == pytest.approx(np.full((1, 2, 3), 16.0))


def test_uplift_never_below_linearize():
    ldr = np.random.default_rng(2).uniform(0, 1, (8, 16, 3))
    ldr[2:4, 3:9] = 1.0
    c = hdr.ResponseCurve()
    lin = hdr.linearize(ldr, c)
    for model in (hdr.ParametricUplift(), hdr.LearnedUplift()):
        assert np.all(hdr.uplift(model, ldr, c) >= lin.astype(np.float32))


def test_learned_checkpoint_round_trip(tmp_path):
    model = hdr.LearnedUplift(hdr.UpliftConfig(seed=3))
    model.save(tmp_path / "m.ckpt")
    again = hdr.load_model(tmp_path / "m.ckpt")
    ldr = np.random.default_rng(0).uniform(0, 1, (8, 16, 3))
    assert np.array_equal(model(ldr, hdr.ResponseCurve()), again(ldr, hdr.ResponseCurve()))
    assert isinstance(hdr.load_model("parametric"), hdr.ParametricUplift)


def test_augment_identity():
    pano = np.random.default_rng(0).lognormal(0, 1, (8, 16, 3))
    x, t = hdr.augment(pano, np.random.default_rng(1), hdr.AugmentConfig.identity())
    assert np.median(t) == pytest.approx(0.5)
    assert np.allclose(x, np.clip(t, 0, 1))


def test_augment_intensity_factor():
    pano = np.zeros((8, 16, 3))
    pano[0, 0] = 3.0
    cfg = hdr.AugmentConfig(roll=False, intensity=0.1, median=0, hue_deg=0, sharpen_sigma=0,
                            noise=0, tonemap=0)
    _, t = hdr.augment(pano, np.random.default_rng(4), cfg)
    k = t[0, 0, 0] / 3.0
    assert 2 ** -0.1 <= k <= 2 ** 0.1
    assert 2 ** 0.1 == pytest.approx(1.0718, abs=1e-4)


def test_augment_noise_only_touches_input():
    pano = np.random.default_rng(0).lognormal(-1, 1, (16, 32, 3))
    cfg = hdr.AugmentConfig(roll=False, intensity=0, median=0, hue_deg=0, sharpen_sigma=0,
                            noise=0.01, tonemap=0)
    x, t = hdr.augment(pano, np.random.default_rng(2), cfg)
    _, t0 = hdr.augment(pano, np.random.default_rng(2), hdr.AugmentConfig.identity())
    assert np.array_equal(t, t0)
    assert np.max(np.abs(x - np.clip(t, 0, 1))) <= 5 * 0.01


def test_hue_rotation_keeps_grey():
    r = hdr.hue_rotation(5.0)
    assert r @ np.ones(3) == pytest.approx(np.ones(3))
    assert r @ r.T == pytest.approx(np.eye(3))


@pytest.fixture(scope="module")
def small_transport():
    return prt.build_transport(prt.ProbeScene(), render_res=8, env_width=8)


def _panos(seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.1, 3.0, (4, 8, 3)), rng.uniform(0.1, 3.0, (4, 8, 3))


def test_loss_zero_at_target(small_transport):
    _, t = _panos()
    loss, terms = hdr.loss_hdr(T.Tensor(t.copy()), t, small_transport)
    assert terms["silog"] == pytest.approx(0, abs=1e-12)
    assert terms["rend"] == pytest.approx(0, abs=1e-5)


def test_loss_scale_invariant_term(small_transport):
    _, t = _panos()
    _, terms = hdr.loss_hdr(T.Tensor(2 * t), t, small_transport)
    assert terms["silog"] == pytest.approx(0, abs=1e-12)
    assert terms["rend"] > 0.1


def test_loss_shape_mismatch(small_transport):
    with pytest.raises(DataError):
        hdr.loss_hdr(T.Tensor(np.ones((4, 8, 3))), np.ones((2, 4, 3)))


@pytest.mark.parametrize("norm", ["none", "rmse", "relative"])
def test_loss_gradient(small_transport, norm):
    p, t = _panos(1)
    mask = hdr.saturation_mask(np.clip(t, 0, 1) ** (1 / 2.2))

    def fn(pred, logits):
        total = T.add(training.scale_invariant_log(pred, t),
                      training.rendering_loss(pred, t, small_transport, norm))
        return T.add(total, training.mask_bce(logits, mask[..., None]))

    logits = np.random.default_rng(2).normal(size=(4, 8, 1))
    assert gradcheck.check_function(fn, [p, logits]) < 1e-4


def test_mask_bce_value():
    logits = T.Tensor(np.zeros((2, 2, 1)))
    assert float(training.mask_bce(logits, np.ones((2, 2))).data) == pytest.approx(np.log(2))


def test_ldr2hdr_training_reduces_loss(small_transport):
    panos = [np.random.default_rng(k).lognormal(0, 2, (32, 64, 3)) for k in range(3)]
    tm = prt.build_transport(prt.ProbeScene(), render_res=8, env_width=16)
    cfg = hdr.Ldr2HdrConfig(iterations=30, batch=2, width=32, lr=1e-3,
                            model=hdr.UpliftConfig(widths=(4, 8), attention_width=4))
    _, hist = hdr.train_ldr2hdr(panos, cfg, tm)
    assert np.mean([h["loss"] for h in hist[-5:]]) < np.mean([h["loss"] for h in hist[:5]])
    _, again = hdr.train_ldr2hdr(panos, cfg, tm)
    assert [h["loss"] for h in hist] == [h["loss"] for h in again]


def test_render_loss_requires_transport():
    with pytest.raises(ValueError):
        hdr.train_ldr2hdr([np.ones((32, 64, 3))], hdr.Ldr2HdrConfig(iterations=1))

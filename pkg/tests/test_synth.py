"""Tests for the box-room oracle and the simulated camera."""
import numpy as np
import pytest

from hdrfield import imgio, synth
from hdrfield.errors import DataError


def _pose(pos=(0, 0, 0), q=(1, 0, 0, 0)):
    return imgio.Pose("p", np.array(pos, float), np.array(q, float))


def _dark_room(emitters):
    return synth.BoxScene(albedo=np.zeros((6, 3)), emitters=emitters)


def test_emitter_pixels_only_at_one_bounce():
    e = synth.Emitter(synth.WALLS.index("+z"), (0.3, 0.3, 0.7, 0.7), [5.0, 6.0, 7.0])
    pano = synth.trace_panorama(_dark_room([e]), _pose(), 64, spp=4)
    lum = pano[..., 0]
    assert lum.max() <= 5.0 + 1e-6
    full = np.isclose(lum, 5.0)
    assert full.sum() > 10
    # emitter seen straight ahead, nothing anywhere else
    assert full[16, 32] and lum[16, 0] == 0 and lum[0].max() == 0
    assert np.allclose(pano[full], [5.0, 6.0, 7.0])


def test_all_walls_emitting_gives_unit_panorama():
    es = [synth.Emitter(k, (0, 0, 1, 1), [1.0, 1.0, 1.0]) for k in range(6)]
    pano = synth.trace_panorama(_dark_room(es), _pose((0.3, -0.2, 0.5)), 32, spp=2, bounces=2)
    assert np.array_equal(pano, np.ones_like(pano))


def test_emitter_subtense_grows_when_approaching():
    e = synth.Emitter(synth.WALLS.index("+z"), (0.45, 0.45, 0.55, 0.55), [1.0, 1.0, 1.0])
    scene = _dark_room([e])
    counts = [(synth.trace_panorama(scene, _pose((0, 0, z)), 64, spp=4)[..., 0] > 0).sum()
              for z in (-1.5, 0.0, 1.5)]
    assert counts[0] < counts[1] < counts[2]


def test_pose_outside_box_rejected():
    with pytest.raises(DataError, match="outside"):
        synth.trace_panorama(synth.default_scene(), _pose((5, 0, 0)), 8)


def test_second_bounce_adds_light():
    scene = synth.BoxScene(emitters=[synth.Emitter(3, (0.2, 0.2, 0.8, 0.8), [10.0, 10.0, 10.0])])
    one = synth.trace_panorama(scene, _pose(), 32, spp=4, bounces=1)
    two = synth.trace_panorama(scene, _pose(), 32, spp=4, bounces=2)
    assert np.all(two >= one)
    walls = one[..., 0] < 10.0
    excess = (two - one)[walls].mean()
    assert 0 < excess <= 0.5 * one[walls].mean()


def test_standard_error_halves_at_four_times_spp():
    scene = synth.BoxScene(emitters=[synth.Emitter(3, (0.2, 0.2, 0.8, 0.8), [10.0, 10.0, 10.0])])
    pix = np.s_[10:13, ::4]

    def spread(spp):
        runs = [synth.trace_panorama(scene, _pose(), 32, spp=spp, seed=s)[pix][..., 0]
                for s in range(24)]
        return np.std(runs, axis=0, ddof=1).mean()

    ratio = spread(4) / spread(16)
    assert 2 * 0.8 <= ratio <= 2 * 1.2


def test_default_scene_dynamic_range():
    pano = synth.trace_panorama(synth.default_scene(), _pose(), 128, spp=4, bounces=2)
    nz = pano[pano > 0]
    assert nz.max() / nz.min() > 2 ** 20


def test_trace_is_thread_independent():
    a = synth.trace_panorama(synth.default_scene(), _pose(), 32, spp=2, threads=1, chunk=100)
    b = synth.trace_panorama(synth.default_scene(), _pose(), 32, spp=2, threads=3, chunk=100)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("value,k,gamma,expect", [
    (0.5, 0, 1.0, 0.5),
    (4.0, 0, 1.0, 1.0),
    (4.0, 3, 1.0, 1.0),
    (0.25, 0, 2.2, 0.25 ** (1 / 2.2)),
])
def test_simulate_capture(value, k, gamma, expect):
    out = synth.simulate_capture(np.full((1, 2, 3), value), k, gamma)
    assert out == pytest.approx(np.full((1, 2, 3), expect), rel=1e-6)
    assert expect == pytest.approx(0.533, abs=1e-3) or gamma == 1.0


def test_bracket_stops():
    pano = np.random.default_rng(0).exponential(1.0, (4, 8, 3))
    st = synth.make_bracket(pano, 11, 22)
    assert np.allclose(st.stops, np.linspace(-11, 11, 11))
    assert st.stops[1] == pytest.approx(-8.8)
    assert np.all(np.diff(st.multipliers) > 0)
    assert all(f.min() >= 0 and f.max() <= 1 for f in st.frames)
    assert np.allclose(synth.make_bracket(pano, 2, 2).stops, [-1, 1])


def test_photographer_mask_is_polar_cap():
    m = synth.photographer_mask(64, 20.0)
    assert m[-1].all() and not m[0].any() and not m[16].any()
    assert np.all(m == m[:, :1])


def test_scene_file_round_trip():
    scene = synth.default_scene()
    again = synth.parse_scene(synth.format_scene(scene))
    assert np.array_equal(again.half, scene.half)
    assert len(again.emitters) == 3
    assert np.array_equal(again.emitters[0].radiance, scene.emitters[0].radiance)


@pytest.mark.parametrize("text,msg", [
    ("emitter +q 0 0 1 1 1 1 1", "unknown wall"),
    ("emitter +y 0.5 0 0.4 1 1 1 1", "outside wall bounds"),
    ("albedo +y 2 0 0", "albedos"),
    ("box 1 1", "cannot parse"),
    ("emitter +y 0 0 1 1 -1 1 1", "nonnegative"),
])
def test_scene_errors(text, msg):
    with pytest.raises(DataError, match=msg):
        synth.parse_scene(text)


def test_dataset_with_no_training_views(tmp_path):
    ds = synth.make_dataset(synth.default_scene(), tmp_path, n_train=0, n_test=2, width=16, spp=1)
    assert len(imgio.read_manifest(ds.manifest)) == 0
    assert len(imgio.read_manifest(ds.test)) == 2


def test_dataset_default_train_count():
    import inspect
    assert inspect.signature(synth.make_dataset).parameters["n_train"].default == 200


def test_dataset_deterministic(tmp_path):
    kw = dict(n_train=2, n_test=1, width=16, spp=1, seed=3, mask_deg=15)
    a = synth.make_dataset(synth.default_scene(), tmp_path / "a", **kw)
    b = synth.make_dataset(synth.default_scene(), tmp_path / "b", threads=2, **kw)
    files = sorted(p.relative_to(a.root) for p in a.root.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b.root) for p in b.root.rglob("*") if p.is_file())
    for f in files:
        assert (a.root / f).read_bytes() == (b.root / f).read_bytes(), f
    m = imgio.read_manifest(a.manifest)
    assert m.kind == "ldr" and all(v.mask is not None for v in m.views)
    assert all(np.linalg.norm(m.normalized_position(v.pose)) < 1 for v in m.views)

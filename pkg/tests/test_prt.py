"""Tests for the transport matrix of the spiky-sphere probe."""
import numpy as np
import pytest

from hdrfield import prt
from hdrfield.errors import DataError


@pytest.fixture(scope="module")
def scene():
    return prt.ProbeScene(albedo=(0.8, 0.6, 0.4))


@pytest.fixture(scope="module")
def tm(scene):
    return prt.build_transport(scene, render_res=32, env_width=32)


def _pixel_at(scene, res, x, z):
    step = 2 * scene.view_half / res
    col = int(round((x + scene.view_half) / step - 0.5))
    row = int(round((z + scene.view_half) / step - 0.5))
    return row * res + col


def test_entries_nonnegative_and_rows_bounded(tm):
    assert tm.matrix.min() >= 0
    sums = tm.matrix.sum(axis=1)[:, None] * tm.albedo
    assert np.all(sums <= tm.albedo + 1e-9)
    assert np.all(tm.matrix[~tm.hit] == 0)
    assert tm.hit.any() and (~tm.hit).any()


def test_far_plane_pixel_sees_albedo(scene, tm):
    p = _pixel_at(scene, 32, 1.6, 1.6)
    assert tm.kind[p] == 1
    # only a sliver near the horizon is hidden by the sphere
    out = prt.relight(tm, np.ones((16, 32, 3))).reshape(-1, 3)[p]
    assert out == pytest.approx(tm.albedo, rel=0.02)


def test_below_horizon_texels_are_zero(tm):
    dirs, _ = prt.env_directions(32)
    plane = tm.kind == 1
    assert np.all(tm.matrix[np.ix_(plane, dirs[:, 1] < 0)] == 0)


def test_shadowed_texel_is_zero(scene, tm):
    p_xz = np.array([0.6, 0.0])
    pix = _pixel_at(scene, 32, *p_xz)
    assert tm.kind[pix] == 1
    point = np.array([p_xz[0], 0.0, p_xz[1]])
    to_center = scene.center - point
    to_center /= np.linalg.norm(to_center)
    dirs, _ = prt.env_directions(32)
    j = int(np.argmax(dirs @ to_center))
    # the texel lies inside the cone subtended by the sphere's inner radius
    inner = scene.radius * (1 - scene.amplitude)
    dist = np.linalg.norm(scene.center - point)
    assert np.arccos(dirs[j] @ to_center) < np.arcsin(inner / dist)
    assert tm.matrix[pix, j] == 0
    # the mirrored texel is open sky
    k = int(np.argmax(dirs @ (to_center * [-1, 1, -1])))
    assert tm.matrix[pix, k] > 0


def test_relight_black_and_linear(tm):
    rng = np.random.default_rng(0)
    e1, e2 = rng.random((16, 32, 3)), rng.random((16, 32, 3))
    assert not prt.relight(tm, np.zeros((16, 32, 3))).any()
    lhs = prt.relight(tm, 2.5 * e1 - 0.75 * e2)
    rhs = 2.5 * prt.relight(tm, e1) - 0.75 * prt.relight(tm, e2)
    assert np.max(np.abs(lhs - rhs)) < 1e-6
    assert prt.relight(tm, e1).min() >= 0


def unshadowed_plane(tm, env_width):
    """Plane pixels with no zero entry among upper-hemisphere texels."""
    dirs, _ = prt.env_directions(env_width)
    blocked = (tm.matrix[:, dirs[:, 1] > 0] == 0).any(axis=1)
    return (tm.kind == 1) & ~blocked


def test_cosine_quadrature_converges():
    for w in (32, 64):
        dirs, dw = prt.env_directions(w)
        assert np.sum(np.maximum(dirs[:, 1], 0) * dw) == pytest.approx(np.pi, rel=0.02)


def test_unit_albedo_constant_env():
    wide = prt.ProbeScene(albedo=(1, 1, 1), plane_half=8.0, view_half=8.0)
    tm = prt.build_transport(wide, render_res=16, env_width=32)
    out = prt.relight(tm, np.ones((16, 32, 3))).reshape(-1, 3)
    open_plane = unshadowed_plane(tm, 32)
    assert open_plane.sum() > 50
    assert out[open_plane] == pytest.approx(np.ones((open_plane.sum(), 3)), rel=0.02)


def test_env_resolution_stability(scene):
    a = prt.build_transport(scene, render_res=16, env_width=32)
    b = prt.build_transport(scene, render_res=16, env_width=64)
    ra = prt.relight(a, np.ones((16, 32, 3)))
    rb = prt.relight(b, np.ones((32, 64, 3)))
    lit = ra > 0.05
    assert np.max(np.abs(ra[lit] - rb[lit]) / rb[lit]) < 0.01 or \
        np.mean(np.abs(ra - rb)) / np.mean(rb) < 0.01


def test_render_rmse(tm):
    rng = np.random.default_rng(1)
    y = rng.random((16, 32, 3))
    assert prt.render_rmse(y, y, tm) == 0
    bump = np.zeros_like(y)
    bump[3, 7] = 1.0
    r1 = prt.render_rmse(y + bump, y, tm)
    r3 = prt.render_rmse(y + 3 * bump, y, tm)
    assert r1 > 0 and r3 == pytest.approx(3 * r1)


def test_dimension_mismatch(tm):
    with pytest.raises(DataError):
        prt.relight(tm, np.ones((8, 16, 3)))
    with pytest.raises(DataError):
        prt.to_env(tm, np.ones((12, 24, 3)))
    assert prt.to_env(tm, np.ones((32, 64, 3))).shape == (16, 32, 3)


def test_cache_round_trip(tmp_path, scene, tm):
    path = tmp_path / "T.bin"
    prt.save_transport(tm, path, scene.digest())
    again = prt.load_transport(path)
    assert np.array_equal(again.matrix, tm.matrix.astype(np.float32))
    assert np.array_equal(again.kind, tm.kind)
    cached = prt.build_transport(scene, render_res=32, env_width=32, cache=path)
    assert np.array_equal(cached.matrix, again.matrix)
    path.write_bytes(b"junk\n")
    with pytest.raises(DataError):
        prt.load_transport(path)


def test_probe_scene_validation():
    with pytest.raises(DataError):
        prt.ProbeScene(height=0.1)
    with pytest.raises(DataError):
        prt.ProbeScene(albedo=(2, 0, 0))
    with pytest.raises(DataError):
        prt.build_transport(prt.ProbeScene(), render_res=4, env_width=8)


def test_transport_thread_independent(scene):
    a = prt.build_transport(scene, render_res=16, env_width=16, threads=1)
    b = prt.build_transport(scene, render_res=16, env_width=16, threads=3)
    assert np.array_equal(a.matrix, b.matrix)


def test_clipped_ldr_relights_worse_than_fused(tmp_path, tm):
    from hdrfield import imgio, synth
    from hdrfield.train import manifest_radiance
    ds = synth.make_dataset(synth.default_scene(), tmp_path, n_train=2, n_test=0, width=32, spp=4)
    ldr = imgio.read_manifest(ds.manifest)
    fused = imgio.read_manifest(ds.fused)
    oracle = imgio.read_manifest(tmp_path / "oracle")
    for lv, fv, ov in zip(ldr.views, fused.views, oracle.views):
        truth = imgio.read_pfm(ov.pano)
        clipped = manifest_radiance(ldr, imgio.read_pfm(lv.pano))
        assert clipped.max() < truth.max()
        fe = prt.render_rmse(imgio.read_pfm(fv.pano), truth, tm)
        le = prt.render_rmse(clipped, truth, tm)
        assert le > fe

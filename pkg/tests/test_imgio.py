"""Tests for PFM, PGM, pose and manifest I/O."""
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdrfield import imgio
from hdrfield.errors import DataError


def _pfm_bytes(values, w, h, big=False):
    fmt = ">" if big else "<"
    scale = b"1.0" if big else b"-1.0"
    body = struct.pack(f"{fmt}{len(values)}f", *values)
    return b"PF\n%d %d\n" % (w, h) + scale + b"\n" + body


def test_read_zero_pfm(tmp_path):
    p = tmp_path / "z.pfm"
    p.write_bytes(_pfm_bytes([0.0] * 6, 2, 1))
    pano = imgio.read_pfm(p)
    assert pano.shape == (1, 2, 3)
    assert not pano.any()


def test_write_zero_pfm_layout(tmp_path):
    p = tmp_path / "z.pfm"
    imgio.write_pfm(np.zeros((1, 2, 3), np.float32), p)
    raw = p.read_bytes()
    header = b"PF\n2 1\n-1.0\n"
    assert raw.startswith(header)
    assert raw[len(header):] == b"\x00" * 24


def test_one_encodes_as_ieee_bytes(tmp_path):
    p = tmp_path / "one.pfm"
    imgio.write_pfm(np.ones((1, 2, 3), np.float32), p)
    assert p.read_bytes()[-4:] == bytes([0x00, 0x00, 0x80, 0x3F])


def test_big_endian_matches_little_endian(tmp_path):
    vals = [1.0, 2.0, 0.5, 3.25, 0.0, 7.0]
    little, big = tmp_path / "l.pfm", tmp_path / "b.pfm"
    little.write_bytes(_pfm_bytes(vals, 2, 1))
    big.write_bytes(_pfm_bytes(vals, 2, 1, big=True))
    assert np.array_equal(imgio.read_pfm(little), imgio.read_pfm(big))


def test_rows_stored_bottom_first(tmp_path):
    pano = np.zeros((2, 4, 3), np.float32)
    pano[0] = 1.0
    p = tmp_path / "r.pfm"
    imgio.write_pfm(pano, p)
    body = np.frombuffer(p.read_bytes()[len(b"PF\n4 2\n-1.0\n"):], "<f4")
    assert not body[:12].any() and (body[12:] == 1).all()


def test_pfm_byte_exact_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    pano = rng.random((8, 16, 3)).astype(np.float32) * 1e3
    a, b = tmp_path / "a.pfm", tmp_path / "b.pfm"
    imgio.write_pfm(pano, a)
    imgio.write_pfm(imgio.read_pfm(a), b)
    assert a.read_bytes() == b.read_bytes()
    assert np.array_equal(imgio.read_pfm(a).view(np.uint32), pano.view(np.uint32))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_pfm_round_trip_property(tmp_path_factory, half, seed):
    pano = np.random.default_rng(seed).exponential(5.0, (half, 2 * half, 3)).astype(np.float32)
    p = tmp_path_factory.mktemp("pfm") / "x.pfm"
    imgio.write_pfm(pano, p)
    assert np.array_equal(imgio.read_pfm(p), pano)


@pytest.mark.parametrize("vals,w,h,msg", [
    ([0.0] * 12, 2, 2, "height must equal width/2"),
    ([float("nan")] + [0.0] * 5, 2, 1, "NaN"),
    ([-1.0] + [0.0] * 5, 2, 1, "negative"),
])
def test_pfm_rejects(tmp_path, vals, w, h, msg):
    p = tmp_path / "bad.pfm"
    p.write_bytes(_pfm_bytes(vals, w, h))
    with pytest.raises(DataError, match=msg):
        imgio.read_pfm(p)


def test_pfm_rejects_bad_magic_and_truncation(tmp_path):
    p = tmp_path / "bad.pfm"
    p.write_bytes(b"P6\n2 1\n-1.0\n" + b"\0" * 24)
    with pytest.raises(DataError, match="magic"):
        imgio.read_pfm(p)
    p.write_bytes(b"PF\n2 1\n-1.0\n" + b"\0" * 20)
    with pytest.raises(DataError, match="payload"):
        imgio.read_pfm(p)


def test_mask_all_zero_and_all_excluded(tmp_path):
    p = tmp_path / "m.pgm"
    p.write_bytes(b"P5\n4 2\n255\n" + bytes(8))
    assert not imgio.read_mask(p).any()
    p.write_bytes(b"P5\n4 2\n255\n" + bytes([255]) * 8)
    assert imgio.read_mask(p).all()


def test_mask_checkerboard(tmp_path):
    p = tmp_path / "m.pgm"
    p.write_bytes(b"P5\n4 2\n255\n" + bytes([0, 255, 0, 255, 255, 0, 255, 0]))
    expect = np.array([[0, 1, 0, 1], [1, 0, 1, 0]], bool)
    assert np.array_equal(imgio.read_mask(p), expect)
    q = tmp_path / "n.pgm"
    imgio.write_mask(expect, q)
    assert q.read_bytes() == p.read_bytes()


def test_mask_rejects_non_binary(tmp_path):
    p = tmp_path / "m.pgm"
    p.write_bytes(b"P5\n2 1\n255\n" + bytes([0, 7]))
    with pytest.raises(DataError, match="binary"):
        imgio.read_mask(p)


def test_parse_poses(tmp_path):
    p = tmp_path / "poses.txt"
    p.write_text("f0 0 0 0 1 0 0 0\nf1 0.5 0 0 1 0 0 0\n")
    a, b = imgio.read_poses(p)
    assert a.frame_id == "f0" and np.array_equal(a.position, [0, 0, 0])
    assert np.allclose(a.rotation(), np.eye(3))
    assert np.array_equal(b.position, [0.5, 0, 0])


@pytest.mark.parametrize("line,msg", [
    ("f0 0 0 0 2 0 0 0", "quaternion not unit"),
    ("f0 0 0 0 1 0 0", "8 fields"),
    ("f0 0 0 nan 1 0 0 0", "non-finite"),
    ("f0 0 0 0,5 1 0 0 0", "non-numeric"),
])
def test_pose_errors(line, msg):
    with pytest.raises(DataError, match=msg):
        imgio.parse_pose(line)


def test_pose_renormalized_within_tolerance():
    pose = imgio.parse_pose("f 0 0 0 1.0005 0 0 0")
    assert np.linalg.norm(pose.orientation) == pytest.approx(1.0, abs=1e-12)


def _dataset(tmp_path, mask=None):
    imgio.write_pfm(np.ones((2, 4, 3), np.float32), tmp_path / "a.pfm")
    (tmp_path / "poses.txt").write_text("f0 0.1 0 0 1 0 0 0\n")
    line = "a.pfm f0" + (f" {mask}" if mask else "")
    (tmp_path / "manifest").write_text(f"scale 0.5\nposes poses.txt\n{line}\n")
    return tmp_path / "manifest"


def test_empty_manifest(tmp_path):
    p = tmp_path / "manifest"
    p.write_text("# nothing\n")
    assert len(imgio.read_manifest(p)) == 0


def test_manifest_one_view(tmp_path):
    m = imgio.read_manifest(_dataset(tmp_path))
    assert len(m) == 1
    assert m.views[0].pose.frame_id == "f0"
    assert m.normalized_position(m.views[0].pose) == pytest.approx([0.05, 0, 0])


def test_manifest_dangling_mask(tmp_path):
    with pytest.raises(DataError, match="nomask.pgm"):
        imgio.read_manifest(_dataset(tmp_path, "nomask.pgm"))


def test_manifest_unknown_pose(tmp_path):
    p = _dataset(tmp_path)
    p.write_text(p.read_text().replace("a.pfm f0", "a.pfm f9"))
    with pytest.raises(DataError, match="f9"):
        imgio.read_manifest(p)


def test_manifest_round_trip(tmp_path):
    m = imgio.read_manifest(_dataset(tmp_path))
    out = tmp_path / "copy"
    imgio.write_manifest(m, out)
    again = imgio.read_manifest(out)
    assert again.scale == m.scale and len(again) == 1
    assert again.views[0].pano == m.views[0].pano

"""Precomputed radiance transfer for a Lambertian spiky sphere on a plane.

The probe scene is seen by a top-down orthographic camera. Each row of the
transport matrix maps environment texels to one rendered pixel:
``V(x, w_j) * max(0, n . w_j) * dw_j / pi``, normalized so that an
unoccluded pixel integrates a constant environment exactly. The RGB albedo
is applied when relighting.
"""
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError
from .geom import downsample, pixel_centers, pixel_to_dir, solid_angle_map
from .parallel import map_chunks

MAGIC = "HDRFIELD-PRT 1"


@dataclass
class ProbeScene:
    radius: float = 0.25
    amplitude: float = 0.15
    frequency: int = 8
    height: float = 0.35          # sphere center above the plane
    plane_half: float = 2.0
    view_half: float = 2.25
    albedo: tuple = (0.8, 0.8, 0.8)
    march_steps: int = 96

    def __post_init__(self):
        rgb = np.asarray(self.albedo, np.float64)
        if rgb.shape != (3,) or np.any((rgb < 0) | (rgb > 1)):
            raise DataError("albedo must be an RGB triple in [0, 1]")
        if self.height - self.radius * (1 + self.amplitude) <= 0:
            raise DataError("sphere must sit above the plane")

    @property
    def center(self):
        return np.array([0.0, self.height, 0.0])

    @property
    def bound(self):
        return self.radius * (1 + self.amplitude)

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TransportMatrix:
    matrix: np.ndarray            # (render pixels, env texels)
    albedo: np.ndarray            # RGB
    render_res: tuple             # (width, height)
    env_res: tuple                # (width, height)
    hit: np.ndarray = field(default=None)   # (render pixels,) bool
    kind: np.ndarray = field(default=None)  # 0 background, 1 plane, 2 sphere

    @property
    def shape(self):
        return self.matrix.shape


# ------------------------------------------------------------ geometry

def _sdf_like(scene, p):
    """Signed radial offset from the spiky surface (negative inside)."""
    q = p - scene.center
    r = np.linalg.norm(q, axis=-1)
    theta = np.arccos(np.clip(q[..., 1] / np.maximum(r, 1e-12), -1, 1))
    phi = np.arctan2(q[..., 0], q[..., 2])
    surf = scene.radius * (1 + scene.amplitude * np.cos(scene.frequency * theta)
                           * np.cos(scene.frequency * phi))
    return r - surf


def _bound_interval(scene, o, d):
    """Entry/exit distances of rays against the bounding sphere (nan if missed)."""
    oc = o - scene.center
    b = np.sum(oc * d, axis=-1)
    c = np.sum(oc * oc, axis=-1) - scene.bound ** 2
    disc = b * b - c
    ok = disc > 0
    s = np.sqrt(np.where(ok, disc, 0.0))
    t0 = np.where(ok, -b - s, np.nan)
    t1 = np.where(ok, -b + s, np.nan)
    return t0, t1


def _march(scene, o, d, t0, t1, refine=30):
    """First crossing into the spiky sphere on ``[t0, t1]``; nan when none."""
    n = scene.march_steps
    ts = t0[:, None] + (t1 - t0)[:, None] * np.linspace(0, 1, n + 1)[None]
    f = _sdf_like(scene, o[:, None] + ts[..., None] * d[:, None])
    inside = f < 0
    first = np.argmax(inside, axis=1)
    hit = inside.any(axis=1) & (first > 0)
    rows = np.arange(len(o))
    lo = ts[rows, np.maximum(first - 1, 0)]
    hi = ts[rows, first]
    for _ in range(refine):
        mid = 0.5 * (lo + hi)
        fin = _sdf_like(scene, o + mid[:, None] * d) < 0
        hi = np.where(fin, mid, hi)
        lo = np.where(fin, lo, mid)
    return np.where(hit, hi, np.nan)


def _sphere_hits(scene, o, d):
    t0, t1 = _bound_interval(scene, o, d)
    t = np.full(len(o), np.nan)
    cand = np.isfinite(t0) & (t1 > 0)
    if cand.any():
        t[cand] = _march(scene, o[cand], d[cand], np.maximum(t0[cand], 0.0), t1[cand])
    return t


def _normal(scene, p, h=1e-5):
    g = np.zeros_like(p)
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        g[:, k] = _sdf_like(scene, p + e) - _sdf_like(scene, p - e)
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def primary_hits(scene, render_res):
    """Top-down orthographic view: hit points, normals and hit kind per pixel."""
    w = h = render_res
    xs = -scene.view_half + (np.arange(w) + 0.5) / w * 2 * scene.view_half
    zs = -scene.view_half + (np.arange(h) + 0.5) / h * 2 * scene.view_half
    gx, gz = np.meshgrid(xs, zs)
    top = 2.0 * scene.height + 2.0 * scene.bound
    o = np.stack([gx.ravel(), np.full(gx.size, top), gz.ravel()], axis=-1)
    d = np.tile([0.0, -1.0, 0.0], (len(o), 1))
    t_s = _sphere_hits(scene, o, d)
    p = np.zeros_like(o)
    n = np.zeros_like(o)
    kind = np.zeros(len(o), np.int8)
    on_sphere = np.isfinite(t_s)
    p[on_sphere] = o[on_sphere] + t_s[on_sphere, None] * d[on_sphere]
    n[on_sphere] = _normal(scene, p[on_sphere])
    kind[on_sphere] = 2
    on_plane = ~on_sphere & (np.abs(o[:, 0]) <= scene.plane_half) & (np.abs(o[:, 2]) <= scene.plane_half)
    p[on_plane] = o[on_plane] * [1.0, 0.0, 1.0]
    n[on_plane] = [0.0, 1.0, 0.0]
    kind[on_plane] = 1
    return p, n, kind


def occluded(scene, x, w):
    """Shadow test of rays ``x + t w`` (t > 0) against sphere and plane."""
    blocked = np.isfinite(_sphere_hits(scene, x, w))
    down = w[:, 1] < -1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(down, -x[:, 1] / w[:, 1], np.inf)
    hp = x + np.where(np.isfinite(t), t, 0.0)[:, None] * w
    on_plane = down & (t > 1e-9) & (np.abs(hp[:, 0]) <= scene.plane_half) \
        & (np.abs(hp[:, 2]) <= scene.plane_half)
    return blocked | on_plane


# ------------------------------------------------------------ transport

def env_directions(env_width):
    env_height = env_width // 2
    i, j = pixel_centers(env_width, env_height)
    return pixel_to_dir(i, j).reshape(-1, 3), solid_angle_map(env_width, env_height).ravel()


def build_transport(scene=None, render_res=64, env_width=32, threads=None, cache=None):
    """Dense transport matrix of shape (render_res^2, env_width^2 / 2).

    With ``cache`` set, a matching file is loaded instead of rebuilding,
    and a freshly built matrix is written there.
    """
    scene = scene or ProbeScene()
    if render_res < 8 or env_width < 4 or env_width % 2:
        raise DataError("need render_res >= 8 and an even env width >= 4")
    if cache is not None and Path(cache).exists():
        tm = load_transport(cache)
        if (tm.render_res == (render_res, render_res) and tm.env_res == (env_width, env_width // 2)
                and _cached_digest(cache) == scene.digest()):
            return tm
    dirs, dw = env_directions(env_width)
    p, n, kind = primary_hits(scene, render_res)
    rows = np.flatnonzero(kind > 0)
    mat = np.zeros((len(p), len(dirs)))

    def work(_, sl):
        idx = rows[sl]
        cos = np.maximum(n[idx] @ dirs.T, 0.0)                   # (r, E)
        full = (cos * dw).sum(axis=1)
        block = np.zeros_like(cos)
        for j in range(len(dirs)):
            live = cos[:, j] > 0
            if not live.any():
                continue
            x = p[idx[live]] + 1e-4 * n[idx[live]]
            w = np.broadcast_to(dirs[j], x.shape)
            vis = ~occluded(scene, x, w)
            block[np.flatnonzero(live)[vis], j] = cos[live][vis, j] * dw[j]
        # normalized so an unoccluded row integrates the cosine lobe exactly
        return block / full[:, None]

    parts = map_chunks(work, len(rows), 256, threads)
    if parts:
        mat[rows] = np.concatenate(parts)
    tm = TransportMatrix(mat, np.asarray(scene.albedo, np.float64), (render_res, render_res),
                         (env_width, env_width // 2), kind > 0, kind)
    if cache is not None:
        save_transport(tm, cache, scene.digest())
    return tm


def to_env(tm, pano):
    """Box-filter a panorama down to the transport's environment resolution."""
    pano = np.asarray(pano, np.float64)
    ew, eh = tm.env_res
    if pano.shape[:2] == (eh, ew):
        return pano
    factor = pano.shape[1] // ew
    if factor * ew != pano.shape[1] or factor * eh != pano.shape[0]:
        raise DataError(f"panorama {pano.shape[1]}x{pano.shape[0]} does not reduce to {ew}x{eh}")
    return downsample(pano, factor)


def relight(tm, env):
    """Rendered probe image (H, W, 3) under environment ``env`` (E_h, E_w, 3)."""
    env = np.asarray(env, np.float64)
    ew, eh = tm.env_res
    if env.shape != (eh, ew, 3):
        raise DataError(f"environment must be {ew}x{eh}x3, got {env.shape}")
    img = (tm.matrix @ env.reshape(-1, 3)) * tm.albedo
    rw, rh = tm.render_res
    return img.reshape(rh, rw, 3)


def render_rmse(y, t, tm):
    """RMS difference of the probe relit by ``y`` and by ``t``."""
    return float(np.sqrt(np.mean((relight(tm, y) - relight(tm, t)) ** 2)))


# ------------------------------------------------------------ cache files

def save_transport(tm, path, digest=""):
    path = Path(path)
    header = {"rows": tm.shape[0], "cols": tm.shape[1], "render": list(tm.render_res),
              "env": list(tm.env_res), "albedo": list(map(float, tm.albedo)),
              "scene": digest, "endian": "little"}
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write((MAGIC + "\n" + json.dumps(header, sort_keys=True) + "\n").encode())
        fh.write(np.asarray(tm.kind, "<i1").tobytes())
        fh.write(np.asarray(tm.matrix, "<f4").tobytes())
    os.replace(tmp, path)


def _read(path):
    raw = Path(path).read_bytes()
    a = raw.find(b"\n")
    b = raw.find(b"\n", a + 1)
    if a < 0 or b < 0 or raw[:a].decode(errors="replace") != MAGIC:
        raise DataError(f"{path}: not a transport file")
    return json.loads(raw[a + 1:b]), raw[b + 1:]


def _cached_digest(path):
    return _read(path)[0].get("scene", "")


def load_transport(path):
    header, body = _read(path)
    r, c = int(header["rows"]), int(header["cols"])
    if len(body) != r + 4 * r * c:
        raise DataError(f"{path}: truncated transport payload")
    kind = np.frombuffer(body[:r], "<i1").astype(np.int8)
    mat = np.frombuffer(body[r:], "<f4").reshape(r, c).astype(np.float64)
    return TransportMatrix(mat, np.array(header["albedo"]), tuple(header["render"]),
                           tuple(header["env"]), kind > 0, kind)

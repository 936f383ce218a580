"""Box-room oracle: an axis-aligned Lambertian room with emissive rectangles,
path-traced to HDR panoramas, plus a simulated LDR camera.

Walls are indexed ``-x, +x, -y, +y, -z, +z`` (0..5). A wall's UV square maps
its two remaining axes, in increasing axis order, from ``[0, 1]`` onto
``[-h, h]``. Emitter rectangles do not reflect light, so they always render
at exactly their radiance.
"""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imgio, streams
from .errors import DataError
from .field import normalization_from_positions
from .geom import pixel_to_dir
from .parallel import map_chunks

WALLS = ("-x", "+x", "-y", "+y", "-z", "+z")

# counter slots for the per-pixel streams
_SUB_I, _SUB_J = 0, 1
_DIRECT = 16
_BOUNCE = 1024
_BOUNCE_DIRECT = 1040


@dataclass
class Emitter:
    wall: int
    rect: tuple          # (u0, v0, u1, v1) in wall UV
    radiance: np.ndarray  # RGB


@dataclass
class BoxScene:
    half: np.ndarray = field(default_factory=lambda: np.array([2.0, 1.25, 2.5]))
    albedo: np.ndarray = field(default_factory=lambda: np.full((6, 3), 0.5))
    emitters: list = field(default_factory=list)

    def __post_init__(self):
        self.half = np.asarray(self.half, np.float64)
        self.albedo = np.asarray(self.albedo, np.float64)
        if self.half.shape != (3,) or np.any(self.half <= 0):
            raise DataError("box half-extents must be three positive numbers")
        if self.albedo.shape != (6, 3) or np.any((self.albedo < 0) | (self.albedo > 1)):
            raise DataError("albedos must be six RGB triples in [0, 1]")
        for e in self.emitters:
            u0, v0, u1, v1 = e.rect
            if not (0 <= u0 < u1 <= 1 and 0 <= v0 < v1 <= 1):
                raise DataError(f"emitter rectangle {e.rect} outside wall bounds")
            e.radiance = np.asarray(e.radiance, np.float64)
            if e.radiance.shape != (3,) or np.any(e.radiance < 0):
                raise DataError("emitter radiance must be a nonnegative RGB triple")

    def contains(self, p, margin=0.0):
        return bool(np.all(np.abs(np.asarray(p)) < self.half - margin))


def default_scene():
    """A 4 x 2.5 x 5 room lit from the ceiling by a bright warm lamp, a
    skylight panel and a dim indicator light, spanning well over 20 stops."""
    ceiling = WALLS.index("+y")
    return BoxScene(emitters=[
        Emitter(ceiling, (0.46, 0.46, 0.54, 0.54), np.array([1.0e4, 0.85e4, 0.6e4])),
        Emitter(ceiling, (0.1, 0.7, 0.35, 0.9), np.array([40.0, 50.0, 60.0])),
        Emitter(ceiling, (0.8, 0.1, 0.9, 0.2), np.array([0.005, 0.005, 0.005])),
    ])


# ------------------------------------------------------------ scene files

def parse_scene(text, where="scene"):
    """Scene grammar, one record per line (``#`` starts a comment)::

        box <hx> <hy> <hz>
        albedo <wall> <r> <g> <b>
        emitter <wall> <u0> <v0> <u1> <v1> <r> <g> <b>

    ``wall`` is one of ``-x +x -y +y -z +z``.
    """
    half = np.array([2.0, 1.25, 2.5])
    albedo = np.full((6, 3), 0.5)
    emitters = []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        loc = f"{where}:{lineno}"
        try:
            if parts[0] == "box" and len(parts) == 4:
                half = np.array([float(v) for v in parts[1:]])
            elif parts[0] == "albedo" and len(parts) == 5:
                albedo[_wall(parts[1], loc)] = [float(v) for v in parts[2:]]
            elif parts[0] == "emitter" and len(parts) == 9:
                nums = [float(v) for v in parts[2:]]
                emitters.append(Emitter(_wall(parts[1], loc), tuple(nums[:4]), np.array(nums[4:])))
            else:
                raise DataError(f"{loc}: cannot parse {line.strip()!r}")
        except ValueError as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"{loc}: non-numeric field in {line.strip()!r}") from None
    return BoxScene(half, albedo, emitters)


def _wall(name, loc):
    if name not in WALLS:
        raise DataError(f"{loc}: unknown wall {name!r}")
    return WALLS.index(name)


def read_scene(path):
    return parse_scene(Path(path).read_text(), where=str(path))


def format_scene(scene):
    lines = ["box " + " ".join(repr(float(v)) for v in scene.half)]
    for k, rgb in enumerate(scene.albedo):
        lines.append(f"albedo {WALLS[k]} " + " ".join(repr(float(v)) for v in rgb))
    for e in scene.emitters:
        nums = [*e.rect, *e.radiance]
        lines.append(f"emitter {WALLS[e.wall]} " + " ".join(repr(float(v)) for v in nums))
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------ geometry

def _wall_axes(wall):
    a = wall // 2
    u, v = [k for k in range(3) if k != a]
    return a, u, v


def _inward_normal(wall):
    n = np.zeros(3)
    n[wall // 2] = -1.0 if wall % 2 else 1.0
    return n


def _intersect(scene, o, d):
    """Exit point of rays starting inside the box: ``(point, wall id)``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (np.sign(d) * scene.half - o) / d
    t = np.where(np.abs(d) > 1e-15, t, np.inf)
    axis = np.argmin(t, axis=-1)
    tmin = np.take_along_axis(t, axis[:, None], axis=-1)[:, 0]
    p = o + tmin[:, None] * d
    positive = np.take_along_axis(d, axis[:, None], axis=-1)[:, 0] > 0
    wall = 2 * axis + positive
    # snap onto the wall plane to avoid drift
    p[np.arange(len(p)), axis] = np.where(positive, 1.0, -1.0) * scene.half[axis]
    return p, wall


def _uv(scene, p, wall):
    uv = np.empty((len(p), 2))
    for w in range(6):
        sel = wall == w
        if not sel.any():
            continue
        _, u, v = _wall_axes(w)
        uv[sel, 0] = (p[sel, u] + scene.half[u]) / (2 * scene.half[u])
        uv[sel, 1] = (p[sel, v] + scene.half[v]) / (2 * scene.half[v])
    return uv


def _surface(scene, p, wall):
    """Emitted radiance and reflectance at wall points."""
    uv = _uv(scene, p, wall)
    emit = np.zeros((len(p), 3))
    rho = scene.albedo[wall].copy()
    for e in scene.emitters:
        u0, v0, u1, v1 = e.rect
        inside = ((wall == e.wall) & (uv[:, 0] >= u0) & (uv[:, 0] <= u1)
                  & (uv[:, 1] >= v0) & (uv[:, 1] <= v1))
        emit[inside] += e.radiance
        rho[inside] = 0.0
    return emit, rho


def _emitter_point(scene, e, su, sv):
    a, u, v = _wall_axes(e.wall)
    u0, v0, u1, v1 = e.rect
    y = np.zeros((len(su), 3))
    y[:, a] = (1.0 if e.wall % 2 else -1.0) * scene.half[a]
    y[:, u] = (u0 + (u1 - u0) * su) * 2 * scene.half[u] - scene.half[u]
    y[:, v] = (v0 + (v1 - v0) * sv) * 2 * scene.half[v] - scene.half[v]
    area = (u1 - u0) * (v1 - v0) * 4 * scene.half[u] * scene.half[v]
    return y, area


def _irradiance(scene, x, wall, rnd):
    """One-sample-per-emitter estimate of irradiance at wall points ``x``.
    The room is convex, so emitters are never occluded."""
    n = np.stack([_inward_normal(w) for w in range(6)])[wall]
    e_sum = np.zeros((len(x), 3))
    for k, e in enumerate(scene.emitters):
        y, area = _emitter_point(scene, e, rnd(2 * k), rnd(2 * k + 1))
        w = y - x
        dist2 = np.sum(w * w, axis=-1)
        dist = np.sqrt(dist2)
        cos_x = np.maximum(np.sum(n * w, axis=-1) / dist, 0.0)
        cos_y = np.maximum(-(w @ _inward_normal(e.wall)) / dist, 0.0)
        e_sum += e.radiance * (area * cos_x * cos_y / np.maximum(dist2, 1e-12))[:, None]
    return e_sum


def _cosine_dirs(normals, r1, r2):
    r = np.sqrt(r1)
    phi = 2 * np.pi * r2
    local = np.stack([r * np.cos(phi), r * np.sin(phi), np.sqrt(np.maximum(0.0, 1 - r1))], -1)
    # orthonormal frame around each axis-aligned normal
    t = np.where(np.abs(normals[:, :1]) > 0.5, [[0.0, 1.0, 0.0]], [[1.0, 0.0, 0.0]])
    b = np.cross(normals, t)
    t = np.cross(b, normals)
    return local[:, :1] * t + local[:, 1:2] * b + local[:, 2:] * normals


def _radiance(scene, o, d, bounces, rnd):
    p, wall = _intersect(scene, o, d)
    emit, rho = _surface(scene, p, wall)
    direct = _irradiance(scene, p, wall, lambda k: rnd(_DIRECT + k))
    out = emit + rho / np.pi * direct
    if bounces >= 2:
        n = np.stack([_inward_normal(w) for w in range(6)])[wall]
        d2 = _cosine_dirs(n, rnd(_BOUNCE), rnd(_BOUNCE + 1))
        p2, wall2 = _intersect(scene, p, d2)
        _, rho2 = _surface(scene, p2, wall2)
        e2 = _irradiance(scene, p2, wall2, lambda k: rnd(_BOUNCE_DIRECT + k))
        # cosine-weighted sampling cancels the cos/pi of the first bounce
        out = out + rho * (rho2 / np.pi * e2)
    return out


def trace_panorama(scene, pose, width, spp=16, bounces=1, seed=0, stream=0,
                   threads=None, chunk=4096):
    """Monte-Carlo HDR panorama of ``scene`` seen from ``pose`` (scene units).

    Each pixel draws from its own counter-based stream keyed by
    ``(seed, stream, pixel, sample, slot)``; sub-pixel offsets are
    stratified along the row. Output is float32 (width/2, width, 3).
    """
    if spp < 1:
        raise ValueError("spp must be >= 1")
    if bounces not in (1, 2):
        raise ValueError("bounces must be 1 or 2")
    if not scene.contains(pose.position):
        raise DataError("pose outside the box")
    height = width // 2
    rot = pose.rotation()
    origin = np.asarray(pose.position, np.float64)

    def work(_, sl):
        pix = np.arange(sl.start, sl.stop)
        jj, ii = np.divmod(pix, width)
        acc = np.zeros((len(pix), 3))
        for s in range(spp):
            def rnd(slot):
                return streams.uniform(seed, stream, pix, s, slot)
            i = (ii + (s + rnd(_SUB_I)) / spp) / width
            j = (jj + rnd(_SUB_J)) / height
            d = pixel_to_dir(i, j) @ rot.T
            o = np.broadcast_to(origin, d.shape)
            acc += _radiance(scene, o, d, bounces, rnd)
        return acc / spp

    parts = map_chunks(work, width * height, chunk, threads)
    return np.concatenate(parts).reshape(height, width, 3).astype(np.float32)


# ------------------------------------------------------------ camera

@dataclass
class ExposureStack:
    stops: np.ndarray    # exposure k per frame, multiplier 2^k, increasing
    frames: list         # clipped, gamma-encoded LDR rasters
    gamma: float = 1.0

    @property
    def multipliers(self):
        return 2.0 ** np.asarray(self.stops, np.float64)

    def __len__(self):
        return len(self.frames)


def simulate_capture(pano, stops, gamma=2.2):
    """``clip(pano * 2^stops, 0, 1) ** (1 / gamma)``."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    pano = np.asarray(pano, np.float64)
    return (np.clip(pano * 2.0 ** stops, 0.0, 1.0) ** (1.0 / gamma)).astype(np.float32)


def make_bracket(pano, n_exposures=11, stops_total=22.0, gamma=2.2, center=0.0):
    """``n`` evenly spaced exposures covering ``stops_total`` f-stops around
    ``center``."""
    if n_exposures < 2:
        raise ValueError("need at least two exposures")
    stops = np.linspace(-stops_total / 2, stops_total / 2, n_exposures) + center
    frames = [simulate_capture(pano, k, gamma) for k in stops]
    return ExposureStack(stops, frames, gamma)


def photographer_mask(width, cap_deg):
    """Polar cap of half-angle ``cap_deg`` around the downward pole; True = excluded."""
    height = width // 2
    elevation = np.pi * (0.5 - (np.arange(height) + 0.5) / height)
    rows = elevation < -np.pi / 2 + np.radians(cap_deg)
    return np.repeat(rows[:, None], width, axis=1)


def auto_exposure(panos, target=0.5):
    """Exposure (stops, rounded to 1/2) that maps the median luminance to ``target``."""
    lum = np.concatenate([np.asarray(p, np.float64).mean(axis=-1).ravel() for p in panos])
    med = float(np.median(lum[lum > 0])) if np.any(lum > 0) else 1.0
    return float(np.round(2 * np.log2(target / med)) / 2)


# ------------------------------------------------------------ datasets

def random_poses(scene, n, rng, prefix, extent=0.5):
    """Positions uniform in the central ``extent`` fraction of the room,
    random yaw about the vertical axis."""
    poses = []
    for k in range(n):
        pos = (rng.random(3) * 2 - 1) * scene.half * extent
        yaw = rng.uniform(-np.pi, np.pi)
        q = np.array([np.cos(yaw / 2), 0.0, np.sin(yaw / 2), 0.0])
        poses.append(imgio.Pose(f"{prefix}{k:03d}", pos, q))
    return poses


@dataclass
class SynthDataset:
    root: Path
    manifest: Path          # LDR training views
    test: Path              # HDR held-out views
    fused: Path | None      # fused-bracket HDR training views
    oracle: Path            # oracle HDR of the training views
    exposure: float
    scene_file: Path


def make_dataset(scene, out_dir, n_train=200, n_test=4, width=128, seed=0, spp=16,
                 bounces=1, gamma=2.2, exposure=None, mask_deg=0.0, fused=True,
                 threads=None, photographer=0.02):
    """Render a posed dataset under ``out_dir``.

    Files: ``manifest`` (LDR training frames, gamma-encoded at one
    dataset-wide exposure), ``test/manifest`` (HDR oracle at held-out poses),
    ``oracle`` (HDR oracle of the training views), optionally
    ``manifest_fused`` (11-exposure / 22-stop brackets fused back to HDR),
    ``poses.txt`` and ``scene.scn``. With ``mask_deg > 0`` the training
    frames show a dark photographer in a polar cap and come with masks.
    """
    from .hdr import ResponseCurve, fuse_exposures

    if width < 4 or width % 2:
        raise DataError("width must be even, height = width/2")
    out = Path(out_dir)
    (out / "train").mkdir(parents=True, exist_ok=True)
    (out / "test").mkdir(parents=True, exist_ok=True)
    rng = streams.generator(seed, 1)
    train = random_poses(scene, n_train, rng, "t")
    test = random_poses(scene, n_test, rng, "h")
    all_poses = train + test
    center, scale = normalization_from_positions(
        [p.position for p in all_poses] if all_poses else np.zeros((1, 3)))
    imgio.write_poses(all_poses, out / "poses.txt")
    scene_file = out / "scene.scn"
    scene_file.write_text(format_scene(scene))

    def trace(k, pose):
        return trace_panorama(scene, pose, width, spp, bounces, seed, k, threads)

    hdr_train = [trace(k, p) for k, p in enumerate(train)]
    hdr_test = [trace(n_train + k, p) for k, p in enumerate(test)]
    if exposure is None:
        exposure = auto_exposure(hdr_train or hdr_test)

    mask = photographer_mask(width, mask_deg) if mask_deg > 0 else None
    if mask is not None:
        imgio.write_mask(mask, out / "train" / "mask.pgm")

    def manifest(kind, gamma_, views, exposure_=0.0):
        return imgio.DatasetManifest(None, views, scale, center, kind, gamma_, exposure_,
                                     out / "poses.txt")

    ldr_views, fused_views, oracle_views = [], [], []
    curve = ResponseCurve(gamma)
    for pose, hdr in zip(train, hdr_train):
        seen = hdr if mask is None else np.where(mask[..., None], photographer, hdr)
        ldr_path = out / "train" / f"ldr_{pose.frame_id}.pfm"
        imgio.write_pfm(simulate_capture(seen, exposure, gamma), ldr_path)
        mpath = None if mask is None else out / "train" / "mask.pgm"
        ldr_views.append(imgio.View(ldr_path, pose, mpath))
        hdr_path = out / "train" / f"hdr_{pose.frame_id}.pfm"
        imgio.write_pfm(hdr, hdr_path)
        oracle_views.append(imgio.View(hdr_path, pose, mpath))
        if fused:
            stack = make_bracket(seen, 11, 22.0, gamma, center=exposure)
            fpath = out / "train" / f"fused_{pose.frame_id}.pfm"
            imgio.write_pfm(fuse_exposures(stack, curve), fpath)
            fused_views.append(imgio.View(fpath, pose, mpath))
    test_views = []
    for pose, hdr in zip(test, hdr_test):
        path = out / "test" / f"hdr_{pose.frame_id}.pfm"
        imgio.write_pfm(hdr, path)
        test_views.append(imgio.View(path, pose))

    imgio.write_manifest(manifest("ldr", gamma, ldr_views, exposure), out / "manifest")
    imgio.write_manifest(manifest("hdr", 1.0, test_views), out / "test" / "manifest")
    imgio.write_manifest(manifest("hdr", 1.0, oracle_views), out / "oracle")
    fused_path = None
    if fused:
        fused_path = out / "manifest_fused"
        imgio.write_manifest(manifest("hdr", 1.0, fused_views), fused_path)
    return SynthDataset(out, out / "manifest", out / "test" / "manifest", fused_path,
                        out / "oracle", exposure, scene_file)

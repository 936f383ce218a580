"""Readers and writers for HDR rasters, masks, poses and dataset manifests.

Panoramas are ``(H, W, 3)`` float32 arrays of linear radiance in
equirectangular layout with ``H == W // 2``; masks are ``(H, W)`` bool
arrays where True marks pixels excluded from the loss.
"""
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError


# ---------------------------------------------------------------- rasters

def check_panorama(data, name="panorama"):
    data = np.asarray(data)
    if data.ndim != 3 or data.shape[2] != 3:
        raise DataError(f"{name}: expected an HxWx3 raster, got shape {data.shape}")
    h, w = data.shape[:2]
    if w % 2 or h != w // 2:
        raise DataError(f"{name}: height must equal width/2, got {w}x{h}")
    if not np.isfinite(data).all():
        raise DataError(f"{name}: non-finite radiance")
    if (data < 0).any():
        raise DataError(f"{name}: negative radiance")
    return data


def read_pfm(path, panorama=True):
    """Read a 3-channel PFM file.

    With ``panorama=True`` (the default) the raster must satisfy the
    panorama invariants: 2:1 aspect, finite and nonnegative values.
    """
    raw = Path(path).read_bytes()
    pos = 0
    tokens = []
    # header: magic, width, height, scale separated by single whitespace runs
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PFM header")
        tokens.append(raw[start:pos].decode("ascii", errors="replace"))
    pos += 1  # exactly one whitespace byte ends the header
    magic, w_tok, h_tok, s_tok = tokens
    if magic != "PF":
        raise DataError(f"{path}: bad PFM magic {magic!r} (expected 'PF')")
    try:
        width, height, scale = int(w_tok), int(h_tok), float(s_tok)
    except ValueError:
        raise DataError(f"{path}: malformed PFM header {tokens!r}") from None
    if width <= 0 or height <= 0 or scale == 0 or not math.isfinite(scale):
        raise DataError(f"{path}: malformed PFM header {tokens!r}")
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    count = width * height * 3
    payload = raw[pos:]
    if len(payload) != count * 4:
        raise DataError(
            f"{path}: payload has {len(payload)} bytes, expected {count * 4}")
    data = np.frombuffer(payload, dtype=dtype).astype(np.float32)
    if np.isnan(data).any():
        raise DataError(f"{path}: NaN in PFM payload")
    data = data.reshape(height, width, 3)[::-1].copy()
    if panorama:
        check_panorama(data, name=str(path))
    return data


def write_pfm(data, path):
    """Write an HxWx3 raster as little-endian PFM, bottom row first."""
    data = np.asarray(data)
    if data.ndim != 3 or data.shape[2] != 3:
        raise DataError(f"write_pfm: expected HxWx3 raster, got {data.shape}")
    h, w = data.shape[:2]
    body = np.ascontiguousarray(data[::-1], dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(f"PF\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(body)


def read_mask(path):
    """Read a binary P5 PGM; 255 marks excluded pixels."""
    raw = Path(path).read_bytes()
    pos = 0
    tokens = []
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos].decode("ascii", errors="replace"))
    pos += 1
    if tokens[0] != "P5":
        raise DataError(f"{path}: bad PGM magic {tokens[0]!r} (expected 'P5')")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise DataError(f"{path}: malformed PGM header {tokens!r}") from None
    if maxval != 255:
        raise DataError(f"{path}: PGM maxval must be 255, got {maxval}")
    payload = np.frombuffer(raw[pos:], dtype=np.uint8)
    if payload.size != width * height:
        raise DataError(
            f"{path}: payload has {payload.size} bytes, expected {width * height}")
    if not np.isin(payload, (0, 255)).all():
        raise DataError(f"{path}: mask payload must be binary (0 or 255)")
    return payload.reshape(height, width) == 255


def write_mask(mask, path):
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise DataError(f"write_mask: expected an HxW mask, got {mask.shape}")
    h, w = mask.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.where(mask, 255, 0).astype(np.uint8).tobytes())


# ------------------------------------------------------------------ poses

@dataclass
class Pose:
    frame_id: str
    position: np.ndarray
    orientation: np.ndarray  # unit quaternion (w, x, y, z), camera-to-world

    def rotation(self):
        return quat_to_matrix(self.orientation)


def quat_to_matrix(q):
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def parse_pose(line, where="pose"):
    parts = line.split()
    if len(parts) != 8:
        raise DataError(f"{where}: expected 8 fields 'id tx ty tz qw qx qy qz', "
                        f"got {len(parts)}")
    try:
        nums = np.array([float(p) for p in parts[1:]])
    except ValueError:
        raise DataError(f"{where}: non-numeric field in {line.strip()!r}") from None
    if not np.isfinite(nums).all():
        raise DataError(f"{where}: non-finite number in {line.strip()!r}")
    q = nums[3:]
    norm = float(np.linalg.norm(q))
    if abs(norm - 1.0) > 1e-3:
        raise DataError(f"{where}: quaternion not unit (norm {norm:.6g})")
    return Pose(parts[0], nums[:3], q / norm)


def read_poses(path):
    poses = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        poses.append(parse_pose(line, where=f"{path}:{lineno}"))
    return poses


def format_pose(pose):
    vals = [*pose.position, *pose.orientation]
    return pose.frame_id + " " + " ".join(repr(float(v)) for v in vals)


def write_poses(poses, path):
    with open(path, "w") as fh:
        for pose in poses:
            fh.write(format_pose(pose) + "\n")


# --------------------------------------------------------------- manifest

@dataclass
class View:
    pano: Path
    pose: Pose
    mask: Path | None = None


@dataclass
class DatasetManifest:
    """A set of posed panoramas plus the scene normalization.

    ``kind`` is ``hdr`` for linear radiance files or ``ldr`` for
    gamma-encoded captures taken at ``exposure`` stops.
    """
    path: Path | None = None
    views: list = field(default_factory=list)
    scale: float = 1.0
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    kind: str = "hdr"
    gamma: float = 1.0
    exposure: float = 0.0
    poses_path: Path | None = None

    def __len__(self):
        return len(self.views)

    def normalized_position(self, pose):
        return (np.asarray(pose.position) - self.center) * self.scale

    def normalized_pose(self, pose):
        return Pose(pose.frame_id, self.normalized_position(pose), pose.orientation)


_DIRECTIVES = ("scale", "center", "poses", "kind", "gamma", "exposure")


def read_manifest(path):
    path = Path(path)
    root = path.parent
    text = path.read_text()
    out = DatasetManifest(path=path)
    entries = []
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        where = f"{path}:{lineno}"
        key = parts[0]
        try:
            if key == "scale":
                out.scale = float(parts[1])
                if not (math.isfinite(out.scale) and out.scale > 0):
                    raise DataError(f"{where}: scale must be positive")
            elif key == "center":
                out.center = np.array([float(v) for v in parts[1:4]])
                if out.center.shape != (3,):
                    raise DataError(f"{where}: center needs 3 numbers")
            elif key == "poses":
                out.poses_path = root / parts[1]
            elif key == "kind":
                if parts[1] not in ("hdr", "ldr"):
                    raise DataError(f"{where}: kind must be hdr or ldr")
                out.kind = parts[1]
            elif key == "gamma":
                out.gamma = float(parts[1])
            elif key == "exposure":
                out.exposure = float(parts[1])
            elif len(parts) in (2, 3):
                entries.append((where, parts))
            else:
                raise DataError(f"{where}: expected 'pano pose_id [mask]', got {line!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, DataError):
                raise
            raise DataError(f"{where}: malformed line {line!r}") from None
    if not entries:
        return out
    if out.poses_path is None:
        raise DataError(f"{path}: views listed but no 'poses' file given")
    if not out.poses_path.exists():
        raise DataError(f"{path}: missing file {out.poses_path}")
    poses = {p.frame_id: p for p in read_poses(out.poses_path)}
    for where, parts in entries:
        pano = root / parts[0]
        if not pano.exists():
            raise DataError(f"{where}: missing file {pano}")
        if parts[1] not in poses:
            raise DataError(f"{where}: pose id {parts[1]!r} not in {out.poses_path}")
        mask = None
        if len(parts) == 3:
            mask = root / parts[2]
            if not mask.exists():
                raise DataError(f"{where}: missing mask file {mask}")
        out.views.append(View(pano, poses[parts[1]], mask))
    return out


def write_manifest(manifest, path):
    """Write ``manifest`` with file paths relative to the manifest's directory."""
    path = Path(path)
    root = path.parent
    lines = ["# hdrfield dataset manifest",
             f"scale {manifest.scale!r}",
             "center " + " ".join(repr(float(c)) for c in manifest.center),
             f"kind {manifest.kind}",
             f"gamma {manifest.gamma!r}",
             f"exposure {manifest.exposure!r}"]
    if manifest.poses_path is not None:
        lines.append(f"poses {os.path.relpath(manifest.poses_path, root)}")
    for v in manifest.views:
        entry = f"{os.path.relpath(v.pano, root)} {v.pose.frame_id}"
        if v.mask is not None:
            entry += f" {os.path.relpath(v.mask, root)}"
        lines.append(entry)
    path.write_text("\n".join(lines) + "\n")

"""Equirectangular mapping, solid angles, and ray generation.

World frame is y-up and right-handed; the center of a panorama looks
down +z and +x sits a quarter turn to the right. Normalized pixel
coordinates ``(i, j)`` run over columns and rows in [0, 1), row 0 at the
north pole.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DataError

DEFAULT_BATCH = 1024


def sph_to_pixel(azimuth, elevation):
    i = np.asarray(azimuth) / (2 * np.pi) + 0.5
    j = (np.pi / 2 - np.asarray(elevation)) / np.pi
    return i, j


def pixel_to_sph(i, j):
    return 2 * np.pi * (np.asarray(i) - 0.5), np.pi * (0.5 - np.asarray(j))


def sph_to_dir(azimuth, elevation):
    azimuth, elevation = np.asarray(azimuth), np.asarray(elevation)
    ce = np.cos(elevation)
    return np.stack([ce * np.sin(azimuth), np.sin(elevation), ce * np.cos(azimuth)], axis=-1)


def dir_to_sph(d):
    d = np.asarray(d, dtype=np.float64)
    azimuth = np.arctan2(d[..., 0], d[..., 2])
    elevation = np.arcsin(np.clip(d[..., 1], -1.0, 1.0))
    return azimuth, elevation


def pixel_to_dir(i, j):
    return sph_to_dir(*pixel_to_sph(i, j))


def dir_to_pixel(d):
    return sph_to_pixel(*dir_to_sph(d))


def pixel_centers(width, height):
    """Normalized ``(i, j)`` grids of pixel centers, each ``(H, W)``."""
    i = (np.arange(width) + 0.5) / width
    j = (np.arange(height) + 0.5) / height
    return np.meshgrid(i, j)


def pixel_solid_angle(j, width, height):
    """Solid angle of a pixel in row ``j`` (integer row index)."""
    elevation = np.pi * (0.5 - (np.asarray(j) + 0.5) / height)
    return (2 * np.pi / width) * (np.pi / height) * np.cos(elevation)


def solid_angle_map(width, height):
    rows = pixel_solid_angle(np.arange(height), width, height)
    return np.repeat(rows[:, None], width, axis=1)


def sample_sphere_uniform(rng, n=None):
    """Azimuth and elevation uniformly distributed over the unit sphere.

    The polar angle comes from the inverse CDF ``arccos(2*beta - 1)``.
    """
    azimuth = rng.uniform(-np.pi, np.pi, size=n)
    beta = rng.uniform(0.0, 1.0, size=n)
    return azimuth, polar_to_elevation(beta)


def polar_to_elevation(beta):
    return np.pi / 2 - np.arccos(2 * np.asarray(beta) - 1)


def pixel_radius(width):
    """Angular footprint radius of a panorama pixel (cone growth per unit t)."""
    return (2 * np.pi / width) * 2 / np.sqrt(12)


@dataclass
class Rays:
    """A batch of cone rays in world space."""
    origins: np.ndarray     # (N, 3)
    directions: np.ndarray  # (N, 3), unit norm
    radii: np.ndarray       # (N,), footprint growth per unit distance

    def __len__(self):
        return len(self.origins)

    def subset(self, idx):
        return Rays(self.origins[idx], self.directions[idx], self.radii[idx])


def rays_for_pose(pose, width, height=None):
    """One ray per pixel center, in row-major order."""
    height = width // 2 if height is None else height
    i, j = pixel_centers(width, height)
    d = pixel_to_dir(i, j).reshape(-1, 3) @ pose.rotation().T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(np.asarray(pose.position, dtype=np.float64), d.shape).copy()
    r = np.full(len(d), pixel_radius(width))
    return Rays(o, d, r)


def bilinear(pano, i, j):
    """Sample a panorama at normalized coordinates; wraps in azimuth, clamps at poles."""
    h, w = pano.shape[:2]
    x = np.asarray(i) * w - 0.5
    y = np.clip(np.asarray(j) * h - 0.5, 0.0, h - 1.0)
    x0 = np.floor(x)
    y0 = np.minimum(np.floor(y), h - 2) if h > 1 else np.zeros_like(y)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    x0 = x0.astype(np.int64) % w
    x1 = (x0 + 1) % w
    y0 = y0.astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    top = pano[y0, x0] * (1 - fx) + pano[y0, x1] * fx
    bot = pano[y1, x0] * (1 - fx) + pano[y1, x1] * fx
    return top * (1 - fy) + bot * fy


@dataclass
class RayBatch:
    rays: Rays
    targets: np.ndarray  # (N, 3) radiance
    pixels: np.ndarray   # (N,) flat index of the nearest pixel


def sample_training_rays(pose, pano, mask, n, rng, mode="spherical"):
    """Draw ``n`` training rays and their target radiance from one view.

    ``planar`` picks unmasked pixel centers uniformly; ``spherical`` draws
    directions uniformly on the sphere and bilinearly interpolates the
    panorama, rejecting directions whose pixel is masked.
    """
    if mode not in ("planar", "spherical"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    h, w = pano.shape[:2]
    keep = np.ones((h, w), bool) if mask is None else ~np.asarray(mask, bool)
    if n > 0 and not keep.any():
        raise DataError("no sampleable pixels")
    rot = pose.rotation()
    if mode == "planar":
        flat = np.flatnonzero(keep.ravel())
        pix = flat[rng.integers(0, len(flat), size=n)]
        jj, ii = np.divmod(pix, w)
        i = (ii + 0.5) / w
        j = (jj + 0.5) / h
        targets = pano[jj, ii].astype(np.float64)
    else:
        i_acc, j_acc, pix_acc = [], [], []
        have = 0
        while have < n:
            m = max(2 * (n - have), 16)
            az, el = sample_sphere_uniform(rng, m)
            i_c, j_c = sph_to_pixel(az, el)
            ii = np.minimum((i_c * w).astype(np.int64), w - 1)
            jj = np.minimum((j_c * h).astype(np.int64), h - 1)
            ok = keep[jj, ii]
            i_acc.append(i_c[ok])
            j_acc.append(j_c[ok])
            pix_acc.append((jj * w + ii)[ok])
            have += int(ok.sum())
        i = np.concatenate(i_acc)[:n]
        j = np.concatenate(j_acc)[:n]
        pix = np.concatenate(pix_acc)[:n]
        targets = bilinear(np.asarray(pano, np.float64), i, j)
    d = pixel_to_dir(i, j) @ rot.T
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    o = np.broadcast_to(np.asarray(pose.position, np.float64), d.shape).copy()
    rays = Rays(o, d, np.full(n, pixel_radius(w)))
    return RayBatch(rays, targets, pix)


def downsample(pano, factor):
    """Box-filter a raster by an integer factor in both axes."""
    if factor == 1:
        return pano
    h, w = pano.shape[:2]
    if h % factor or w % factor:
        raise DataError(f"cannot downsample {w}x{h} by {factor}")
    return pano.reshape(h // factor, factor, w // factor, factor, -1).mean(axis=(1, 3))

"""Volume rendering along partitioned rays.

Foreground intervals are sampled in ray distance ``t`` inside the unit
sphere, background intervals in inverse radius ``s = 1/r`` from 1 down to
``bg_eps``. Both are composited with the usual exponential transmittance
and the background is attenuated by what the foreground lets through.
"""
from dataclasses import asdict, dataclass

import numpy as np

from . import streams
from .errors import DataError
from .field import BG_EPS, frustum_moments, partition_ray, ray_t_at_radius
from .geom import rays_for_pose
from .net import tape as T
from .parallel import map_chunks

PDF_FLOOR = 1e-5


@dataclass
class RenderConfig:
    n_coarse: int = 64
    n_fine: int = 128
    t_near: float = 0.02
    bg_eps: float = BG_EPS
    chunk: int = 1024

    def __post_init__(self):
        if self.n_coarse < 1 or self.n_fine < 0:
            raise ValueError("sample counts must be positive")
        if not 0 < self.bg_eps < 1:
            raise ValueError("bg_eps must lie in (0, 1)")

    def to_dict(self):
        return asdict(self)


@dataclass
class RadianceEstimate:
    rgb: object        # Tensor (rays, 3)
    t_end: object      # Tensor (rays,)
    weights: object    # Tensor (rays, intervals)


@dataclass
class PassResult:
    fg: RadianceEstimate
    bg: RadianceEstimate
    rgb: object        # Tensor (rays, 3), foreground plus attenuated background


# ------------------------------------------------------------ quadrature

def composite(boundaries, sigma, rgb, deltas=None):
    """Alpha-composite per-interval density and colour along each ray.

    ``boundaries`` is (rays, N+1) and must be monotone along each row (either
    direction); interval lengths are ``|b[i+1] - b[i]|`` unless ``deltas``
    (rays, N) is given.
    """
    b = np.asarray(boundaries, np.float64)
    steps = np.diff(b, axis=-1)
    if not (np.all(steps >= 0, axis=-1) | np.all(steps <= 0, axis=-1)).all():
        raise DataError("sample boundaries are not monotone")
    delta = np.abs(steps) if deltas is None else np.asarray(deltas, np.float64)
    if np.any(delta < 0):
        raise DataError("negative interval length")
    sigma = T.as_tensor(sigma)
    rgb = T.as_tensor(rgb)
    delta = delta.astype(sigma.dtype)
    sd = T.mul(sigma, delta)
    alpha = T.sub(1.0, T.exp(T.neg(sd)))
    trans = T.exp(T.neg(T.cumsum_exclusive(sd, axis=-1)))
    weights = T.mul(trans, alpha)
    color = T.sum_(T.mul(T.reshape(weights, (*weights.shape, 1)), rgb), axis=-2)
    t_end = T.exp(T.neg(T.sum_(sd, axis=-1)))
    return RadianceEstimate(color, t_end, weights)


def compose_fg_bg(fg, bg):
    """``C = C_fg + T_fg_end * C_bg``."""
    att = T.reshape(fg.t_end, (*fg.t_end.shape, 1))
    return T.add(fg.rgb, T.mul(att, bg.rgb))


# ------------------------------------------------------------ sampling

def _uniforms(rng, shape):
    return np.full(shape, 0.5) if rng is None else rng.random(shape)


def stratified_samples(lo, hi, n, rng=None):
    """One draw per stratum of ``[lo, hi]`` split into ``n`` equal parts.

    Returns ``(boundaries, samples)`` with ``samples`` of shape (rays, n) and
    ``boundaries`` (rays, n+1): the interval ends plus midpoints between
    consecutive samples. ``rng=None`` pins every draw to its stratum
    midpoint, which makes the boundaries evenly spaced.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    lo, hi = np.broadcast_arrays(np.asarray(lo, np.float64), np.asarray(hi, np.float64))
    lo = np.atleast_1d(lo)[:, None]
    hi = np.atleast_1d(hi)[:, None]
    u = _uniforms(rng, (lo.shape[0], n))
    frac = (np.arange(n) + u) / n
    samples = lo + (hi - lo) * frac
    mids = 0.5 * (samples[:, 1:] + samples[:, :-1])
    boundaries = np.concatenate([lo, mids, hi], axis=-1)
    return boundaries, samples


def _strictly_increasing(b):
    """Nudge coincident boundaries apart so every interval has positive length."""
    span = np.abs(b[:, -1:] - b[:, :1])
    tiny = 1e-9 * np.maximum(span, 1e-12)
    out = b.copy()
    for k in range(1, out.shape[1]):
        out[:, k] = np.maximum(out[:, k], out[:, k - 1] + tiny[:, 0])
    return out


def importance_resample(weights, boundaries, m, rng=None):
    """Draw ``m`` extra boundaries from the piecewise-constant pdf of the
    coarse ``weights`` (plus a small uniform floor) by inverse CDF, and merge
    them with the coarse ``boundaries``. Boundaries must be increasing.

    The draws are stratified in CDF space, so rows whose weights are all
    zero reduce to plain stratified sampling of the interval.
    """
    w = np.asarray(weights, np.float64)
    b = np.asarray(boundaries, np.float64)
    if np.any(w < 0):
        raise DataError("negative sample weights")
    if m == 0:
        return b
    rows, n = w.shape
    pdf = w + PDF_FLOOR
    pdf /= pdf.sum(axis=-1, keepdims=True)
    cdf = np.concatenate([np.zeros((rows, 1)), np.cumsum(pdf, axis=-1)], axis=-1)
    cdf[:, -1] = 1.0
    u = (np.arange(m) + _uniforms(rng, (rows, m))) / m
    # row-offset trick turns the per-row search into one flat searchsorted
    offset = 2.0 * np.arange(rows)[:, None]
    idx = np.searchsorted((cdf[:, 1:] + offset).ravel(), (u + offset).ravel(), side="right")
    idx = idx.reshape(rows, m) - n * np.arange(rows)[:, None]
    idx = np.clip(idx, 0, n - 1)
    c0 = np.take_along_axis(cdf, idx, axis=-1)
    p = np.take_along_axis(pdf, idx, axis=-1)
    b0 = np.take_along_axis(b, idx, axis=-1)
    b1 = np.take_along_axis(b, idx + 1, axis=-1)
    frac = np.clip((u - c0) / p, 0.0, 1.0)
    fine = b0 + frac * (b1 - b0)
    merged = np.sort(np.concatenate([b, fine], axis=-1), axis=-1)
    return _strictly_increasing(merged)


# ------------------------------------------------------------ ray passes

def _foreground_pass(field, rays, bounds, level):
    t0, t1 = bounds[:, :-1], bounds[:, 1:]
    mean, var = frustum_moments(rays.origins, rays.directions, rays.radii, t0, t1)
    sigma, rgb = field.foreground(mean, var, rays.directions, level)
    return composite(bounds, sigma, rgb)


def _background_pass(field, rays, s_desc, level):
    """``s_desc`` runs from 1 down to eps; lengths are metric radial steps."""
    r = 1.0 / s_desc
    deltas = r[:, 1:] - r[:, :-1]
    s_mid = 0.5 * (s_desc[:, 1:] + s_desc[:, :-1])
    t = ray_t_at_radius(rays.origins, rays.directions, 1.0 / s_mid)
    p = rays.origins[:, None, :] + t[..., None] * rays.directions[:, None, :]
    unit = p / np.linalg.norm(p, axis=-1, keepdims=True)
    sigma, rgb = field.background(unit, s_mid, rays.directions, level)
    return composite(s_desc, sigma, rgb, deltas=deltas)


def _pass(field, rays, fg_b, bg_s, level):
    fg = _foreground_pass(field, rays, fg_b, level)
    bg = _background_pass(field, rays, bg_s, level)
    return PassResult(fg, bg, compose_fg_bg(fg, bg))


def render_rays(field, rays, cfg=None, rng=None):
    """Coarse pass on stratified samples, then a fine pass on the coarse
    samples merged with importance draws. Returns ``(coarse, fine)``
    :class:`PassResult`s; ``fine`` is None when ``cfg.n_fine == 0``.
    """
    cfg = cfg or RenderConfig()
    (t_near, t_far), (eps, one) = partition_ray(rays.origins, rays.directions,
                                                cfg.t_near, cfg.bg_eps)
    fg_b, _ = stratified_samples(t_near, t_far, cfg.n_coarse, rng)
    bg_asc, _ = stratified_samples(np.full(len(rays), eps), np.full(len(rays), one),
                                   cfg.n_coarse, rng)
    coarse = _pass(field, rays, fg_b, bg_asc[:, ::-1], "coarse")
    if cfg.n_fine == 0:
        return coarse, None
    fg_fine = importance_resample(coarse.fg.weights.data, fg_b, cfg.n_fine, rng)
    # background weights are stored near-to-far, i.e. descending s
    bg_fine = importance_resample(coarse.bg.weights.data[:, ::-1], bg_asc, cfg.n_fine, rng)
    fine = _pass(field, rays, fg_fine, bg_fine[:, ::-1], "fine")
    return coarse, fine


def render_ray(field, origin, direction, radius, cfg=None, rng=None):
    from .geom import Rays
    rays = Rays(np.atleast_2d(origin).astype(np.float64),
                np.atleast_2d(direction).astype(np.float64),
                np.atleast_1d(np.asarray(radius, np.float64)))
    return render_rays(field, rays, cfg, rng)


def render_panorama(field, pose, width, cfg=None, threads=None, seed=None):
    """Render one equirectangular panorama at ``pose`` (normalized scene
    coordinates) as float32 (width/2, width, 3).

    Rays are processed in fixed chunks of ``cfg.chunk``. With ``seed=None``
    every stratum is pinned to its midpoint; otherwise chunk ``k`` draws from
    stream ``(seed, k)``. Either way the result is independent of ``threads``.
    """
    cfg = cfg or RenderConfig()
    if width < 2 or width % 2:
        raise DataError("panorama width must be even")
    height = width // 2
    rays = rays_for_pose(pose, width, height)
    if np.linalg.norm(rays.origins[0]) >= 1:
        raise DataError("pose lies outside the unit sphere")

    def work(k, sl):
        rng = None if seed is None else streams.generator(seed, k)
        coarse, fine = render_rays(field, rays.subset(sl), cfg, rng)
        out = fine if fine is not None else coarse
        return out.rgb.data

    parts = map_chunks(work, len(rays), cfg.chunk, threads)
    return np.concatenate(parts).reshape(height, width, 3).astype(np.float32)


# ------------------------------------------------------------ analytic fields

class AnalyticField:
    """Closed-form stand-in for :class:`~hdrfield.field.RadianceField`.

    ``fg(points) -> (sigma, rgb)`` is evaluated at frustum means and
    ``bg(unit, inv_r) -> (sigma, rgb)`` at background samples; both default
    to vacuum.
    """

    def __init__(self, fg=None, bg=None):
        self.fg = fg
        self.bg = bg

    @staticmethod
    def _vacuum(shape):
        return np.zeros(shape), np.zeros((*shape, 3))

    def foreground(self, mean, var, directions, level):
        sigma, rgb = self.fg(mean) if self.fg else self._vacuum(mean.shape[:-1])
        return T.Tensor(np.asarray(sigma, np.float64)), T.Tensor(np.asarray(rgb, np.float64))

    def background(self, unit, inv_r, directions, level):
        sigma, rgb = self.bg(unit, inv_r) if self.bg else self._vacuum(unit.shape[:-1])
        return T.Tensor(np.asarray(sigma, np.float64)), T.Tensor(np.asarray(rgb, np.float64))


def emissive_shell(radiance, inv_r_max=0.5, density=1e3):
    """Background callable: vacuum out to ``r = 1/inv_r_max``, then an opaque
    shell of the given RGB radiance."""
    radiance = np.asarray(radiance, np.float64)

    def bg(unit, inv_r):
        shell = inv_r <= inv_r_max
        sigma = np.where(shell, density, 0.0)
        rgb = np.broadcast_to(radiance, (*inv_r.shape, 3))
        return sigma, rgb

    return bg

"""Dense radiance MLPs and the small convolution helpers built on the tape."""
from dataclasses import asdict, dataclass

import numpy as np

from . import tape as T


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


class Dense:
    def __init__(self, store, name, n_in, n_out, rng, bias=0.0):
        self.w = store.declare(f"{name}.w", glorot(rng, n_in, n_out))
        self.b = store.declare(f"{name}.b", np.full(n_out, bias))
        self.store = store

    def __call__(self, x):
        return T.affine(x, self.store[self.w], self.store[self.b])


class Conv3x3:
    def __init__(self, store, name, c_in, c_out, rng, bias=0.0):
        self.w = store.declare(f"{name}.w", glorot(rng, 9 * c_in, c_out))
        self.b = store.declare(f"{name}.b", np.full(c_out, bias))
        self.store = store

    def __call__(self, x):
        return T.conv3x3(x, self.store[self.w], self.store[self.b])


@dataclass
class MlpConfig:
    depth: int = 8
    width: int = 256
    in_dim: int = 63
    dir_dim: int = 27
    skip: int = 4
    dir_width: int | None = None

    def __post_init__(self):
        if self.depth < 1 or self.width < 1:
            raise ValueError("MLP depth and width must be >= 1")

    def to_dict(self):
        return asdict(self)


class RadianceMLP:
    """NeRF-style trunk: ``depth`` ReLU layers with the input re-injected
    after layer ``skip``, a density head, then a view-dependent colour branch.

    Density and colour both pass through softplus, so colour is
    nonnegative but unbounded above.
    """

    def __init__(self, store, prefix, cfg, rng):
        self.cfg = cfg
        self.layers = []
        n_in = cfg.in_dim
        for i in range(cfg.depth):
            self.layers.append(Dense(store, f"{prefix}.l{i}", n_in, cfg.width, rng))
            n_in = cfg.width + (cfg.in_dim if i == cfg.skip else 0)
        dir_width = cfg.dir_width or max(cfg.width // 2, 1)
        self.sigma_head = Dense(store, f"{prefix}.sigma", n_in, 1, rng)
        self.feature = Dense(store, f"{prefix}.feat", n_in, cfg.width, rng)
        self.dir_layer = Dense(store, f"{prefix}.dir", cfg.width + cfg.dir_dim, dir_width, rng)
        self.rgb_head = Dense(store, f"{prefix}.rgb", dir_width, 3, rng)

    def __call__(self, x, d):
        x = T.as_tensor(x)
        h = x
        for i, layer in enumerate(self.layers):
            h = T.relu(layer(h))
            if i == self.cfg.skip:
                h = T.concat([x, h], axis=-1)
        raw_sigma = self.sigma_head(h)
        sigma = T.softplus(T.reshape(raw_sigma, raw_sigma.shape[:-1]))
        feat = self.feature(h)
        h2 = T.relu(self.dir_layer(T.concat([feat, T.as_tensor(d)], axis=-1)))
        rgb = T.softplus(self.rgb_head(h2))
        return sigma, rgb

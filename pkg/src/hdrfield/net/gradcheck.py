"""Central finite-difference checks of tape gradients."""
import numpy as np

from . import tape as T
from .layers import MlpConfig, RadianceMLP
from .params import ParamStore


def rel_error(a, b, floor=1e-12):
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _fd_grad(f, x, h):
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        fp = f()
        flat[k] = old - h
        fm = f()
        flat[k] = old
        gf[k] = (fp - fm) / (2 * h)
    return g


def check_function(fn, inputs, seed=0, h=1e-6):
    """Compare tape gradients of ``sum(r * fn(*inputs))`` with central
    differences for every input coordinate. Returns the max relative error."""
    rng = np.random.default_rng(seed)
    leaves = [T.Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    with T.Tape() as tape:
        out = fn(*leaves)
        r = rng.standard_normal(out.shape)
        loss = T.sum_(T.mul(out, r))
        tape.backward(loss)
    worst = 0.0
    for leaf in leaves:
        def f():
            return float(np.sum(fn(*[T.Tensor(l.data) for l in leaves]).data * r))
        num = _fd_grad(f, leaf.data, h)
        ana = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad
        scale = max(np.abs(num).max(), np.abs(ana).max(), 1e-300)
        # coordinates whose derivative is ~0 are compared absolutely against the scale
        err = np.abs(num - ana) / np.maximum(np.maximum(np.abs(num), np.abs(ana)), 1e-3 * scale)
        worst = max(worst, float(err.max()))
    return worst


def _primitive_cases(rng):
    def pos(*s):
        return rng.uniform(0.5, 2.0, size=s)

    def sym(*s):
        return rng.uniform(-1.5, 1.5, size=s) + np.where(rng.random(s) < 0.5, -0.1, 0.1)

    img = sym(2, 4, 6, 3)
    return {
        "add": (T.add, [sym(3, 4), sym(4)]),
        "sub": (T.sub, [sym(3, 4), sym(3, 1)]),
        "mul": (T.mul, [sym(3, 4), sym(3, 4)]),
        "div": (T.div, [sym(3, 4), pos(3, 4)]),
        "neg": (T.neg, [sym(5)]),
        "matmul": (T.matmul, [sym(2, 3, 4), sym(4, 5)]),
        "affine": (T.affine, [sym(6, 4), sym(4, 3), sym(3)]),
        "exp": (T.exp, [sym(7)]),
        "log": (T.log, [pos(7)]),
        "log1p": (T.log1p, [pos(7)]),
        "sin": (T.sin, [sym(7)]),
        "cos": (T.cos, [sym(7)]),
        "square": (T.square, [sym(7)]),
        "sqrt": (T.sqrt, [pos(7)]),
        "relu": (T.relu, [sym(9)]),
        "sigmoid": (T.sigmoid, [sym(9)]),
        "softplus": (T.softplus, [sym(9)]),
        "sum": (lambda a: T.sum_(a, axis=1), [sym(3, 4)]),
        "mean": (lambda a: T.mean(a, axis=0, keepdims=True), [sym(3, 4)]),
        "cumsum": (lambda a: T.cumsum_exclusive(a, axis=-1), [sym(3, 5)]),
        "reshape": (lambda a: T.reshape(a, (4, 3)), [sym(3, 4)]),
        "take": (lambda a: T.take(a, (slice(None), np.array([0, 2, 2]))), [sym(3, 4)]),
        "concat": (lambda a, b: T.concat([a, b], axis=0), [sym(2, 3), sym(1, 3)]),
        "pad": (T.pad_panorama, [img]),
        "im2col": (T.im2col3, [sym(1, 4, 5, 2)]),
        "conv3x3": (T.conv3x3, [img, sym(27, 4), sym(4)]),
        "avgpool2": (T.avgpool2, [img]),
        "upsample2": (T.upsample2, [sym(1, 2, 3, 2)]),
    }


def check_primitives(seed=0, h=1e-6):
    """Max relative gradient error of every primitive, keyed by name."""
    rng = np.random.default_rng(seed)
    cases = _primitive_cases(rng)
    missing = set(T.PRIMITIVES) - set(cases)
    if missing:
        raise AssertionError(f"no gradient case for primitives {sorted(missing)}")
    return {name: check_function(fn, args, seed=seed, h=h) for name, (fn, args) in cases.items()}


def check_mlp(depth=8, width=256, batch=8, seed=0, h=1e-6, n_coords=24, n_dirs=4,
              dtype=np.float64):
    """Gradient check of a random radiance MLP.

    Checks ``n_coords`` individual parameters (those with the largest
    gradients plus random ones) and ``n_dirs`` random directional
    derivatives over the whole parameter vector. Finite differences are
    always taken in float64; ``dtype`` sets the precision of the tape.
    """
    rng = np.random.default_rng(seed)
    cfg = MlpConfig(depth=depth, width=width, in_dim=15, dir_dim=9, skip=min(4, depth - 1))
    store = ParamStore(np.float64)
    mlp = RadianceMLP(store, "mlp", cfg, rng)
    store.build()
    x = rng.uniform(-1, 1, size=(batch, cfg.in_dim))
    d = rng.uniform(-1, 1, size=(batch, cfg.dir_dim))
    rs = rng.standard_normal(batch)
    rc = rng.standard_normal((batch, 3))
    theta64 = store.values.copy()

    def loss_value(theta):
        store.values[...] = theta
        sigma, rgb = mlp(x, d)
        return float(np.sum(sigma.data * rs) + np.sum(rgb.data * rc))

    if dtype == np.float64:
        work = store
    else:
        work = ParamStore(dtype)
        mlp_lp = RadianceMLP(work, "mlp", cfg, np.random.default_rng(seed))
        work.build()
        work.values[...] = theta64
    net = mlp if work is store else mlp_lp
    with T.Tape() as tape:
        sigma, rgb = net(x.astype(work.dtype), d.astype(work.dtype))
        loss = T.add(T.sum_(T.mul(sigma, rs.astype(work.dtype))),
                     T.sum_(T.mul(rgb, rc.astype(work.dtype))))
        tape.backward(loss)
    grad = work.grads.astype(np.float64).copy()
    store.values[...] = theta64

    errors = []
    top = np.argsort(-np.abs(grad))[: n_coords // 2]
    rand = rng.choice(grad.size, size=n_coords - len(top), replace=False)
    for k in np.concatenate([top, rand]):
        tp, tm = theta64.copy(), theta64.copy()
        tp[k] += h
        tm[k] -= h
        num = (loss_value(tp) - loss_value(tm)) / (2 * h)
        if max(abs(num), abs(grad[k])) < 1e-3 * np.abs(grad).max():
            continue
        errors.append(float(rel_error(grad[k], num)))
    for _ in range(n_dirs):
        v = rng.standard_normal(grad.size)
        v /= np.linalg.norm(v)
        num = (loss_value(theta64 + h * v) - loss_value(theta64 - h * v)) / (2 * h)
        errors.append(float(rel_error(grad @ v, num)))
    store.values[...] = theta64
    return max(errors)

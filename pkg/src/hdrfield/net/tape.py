"""Reverse-mode automatic differentiation over numpy arrays.

Operations executed while a :class:`Tape` is active are appended to it in
execution order; :meth:`Tape.backward` walks that list in reverse and
accumulates adjoints. Outside a tape the same functions just compute
values, which is what inference uses.
"""
import threading

import numpy as np

from ..errors import NumericError

_LOCAL = threading.local()


def _tapes():
    if not hasattr(_LOCAL, "tapes"):
        _LOCAL.tapes = []
    return _LOCAL.tapes


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "op", "requires_grad",
                 "is_param")

    def __init__(self, data, requires_grad=False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.parents = ()
        self.backward_fn = None
        self.op = "leaf"
        self.requires_grad = requires_grad
        self.is_param = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.shape}, grad={self.requires_grad})"

    def numpy(self):
        return self.data

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Tape:
    """Records differentiable operations in execution order.

    With ``check_finite`` set, any operation producing NaN or inf raises
    :class:`NumericError` naming the offending node.
    """

    def __init__(self, check_finite=True):
        self.nodes = []
        self.check_finite = check_finite

    def __enter__(self):
        _tapes().append(self)
        return self

    def __exit__(self, *exc):
        _tapes().remove(self)
        return False

    def backward(self, output, adjoint=None):
        """Accumulate d(output)/d(leaf) into every leaf's ``grad``.

        ``adjoint`` defaults to ones (so a scalar loss gets seed 1).
        """
        if not output.requires_grad or not any(n is output for n in self.nodes):
            raise RuntimeError("backward called before a recorded forward pass")
        seed = np.ones_like(output.data) if adjoint is None else \
            np.asarray(adjoint, dtype=output.dtype).reshape(output.shape)
        output.grad = seed
        for node in reversed(self.nodes):
            g = node.grad
            if g is None:
                continue
            grads = node.backward_fn(g)
            for parent, gp in zip(node.parents, grads):
                if gp is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = gp
                elif parent.is_param:
                    parent.grad += gp
                else:
                    parent.grad = parent.grad + gp
            node.grad = None
        self.nodes = []


def active_tape():
    tapes = _tapes()
    return tapes[-1] if tapes else None


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _coerce(a, b):
    """Promote a non-tensor operand to a constant matching the tensor dtype."""
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.dtype))
    if not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def _node(data, parents, backward_fn, op):
    tape = active_tape()
    if tape is None:
        return Tensor(data)
    if tape.check_finite and not np.isfinite(data).all():
        raise NumericError(f"non-finite value produced by node #{len(tape.nodes)} ({op})")
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = parents
        out.backward_fn = backward_fn
        out.op = op
        tape.nodes.append(out)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ------------------------------------------------------------ arithmetic

def add(a, b):
    a, b = _coerce(a, b)
    return _node(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = _coerce(a, b)
    return _node(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b):
    a, b = _coerce(a, b)
    return _node(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None),
                 "mul")


def div(a, b):
    a, b = _coerce(a, b)
    out = a.data / b.data
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                            _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None),
                 "div")


def neg(a):
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b):
    """Batched matrix product with numpy broadcasting (both operands ndim >= 2)."""
    a, b = _coerce(a, b)

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _node(a.data @ b.data, (a, b), back, "matmul")


def affine(x, w, b):
    """``x @ w + b`` for ``x`` of shape (..., K), ``w`` (K, M), ``b`` (M,)."""
    x = as_tensor(x)
    out = x.data @ w.data + b.data

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g @ w.data.T) if x.requires_grad else None
        gw = x.data.reshape(-1, x.shape[-1]).T @ g2
        gb = g2.sum(axis=0)
        return gx, gw, gb

    return _node(out, (x, w, b), back, "affine")


# ------------------------------------------------------------ elementwise

def exp(a):
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def log1p(a):
    return _node(np.log1p(a.data), (a,), lambda g: (g / (1 + a.data),), "log1p")


def sin(a):
    return _node(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a):
    return _node(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def square(a):
    return _node(a.data * a.data, (a,), lambda g: (2 * g * a.data,), "square")


def sqrt(a):
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g / (2 * out),), "sqrt")


def relu(a):
    return _node(np.maximum(a.data, 0), (a,), lambda g: (g * (a.data > 0),), "relu")


def _sigmoid(x):
    return 0.5 * (1 + np.tanh(0.5 * x))


def sigmoid(a):
    out = _sigmoid(a.data)
    return _node(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def softplus(a):
    return _node(np.logaddexp(0, a.data), (a,), lambda g: (g * _sigmoid(a.data),), "softplus")


# ------------------------------------------------------------ reductions

def sum_(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _node(np.asarray(out), (a,), back, "sum")


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), 1.0 / float(n))


def cumsum_exclusive(a, axis=-1):
    """``y[i] = sum(x[:i])`` along ``axis``."""
    cs = np.cumsum(a.data, axis=axis)
    out = cs - a.data

    def back(g):
        rev = np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis)
        return (rev - g,)

    return _node(out, (a,), back, "cumsum")


# ------------------------------------------------------------ shaping

def reshape(a, shape):
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def _is_basic(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(None))) or i is Ellipsis for i in items)


def take(a, idx):
    def back(g):
        full = np.zeros_like(a.data)
        if _is_basic(idx):
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _node(a.data[idx], (a,), back, "take")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(out, tuple(tensors), back, "concat")


# ------------------------------------------------------------ image ops (NHWC)

def pad_panorama(a):
    """Pad by one pixel: wrap in width (azimuth), replicate in height."""
    x = a.data
    x = np.concatenate([x[:, :, -1:], x, x[:, :, :1]], axis=2)
    x = np.concatenate([x[:, :1], x, x[:, -1:]], axis=1)

    def back(g):
        g = g.copy()
        g[:, 1] += g[:, 0]
        g[:, -2] += g[:, -1]
        g = g[:, 1:-1]
        g[:, :, 1] += g[:, :, -1]
        g[:, :, -2] += g[:, :, 0]
        return (g[:, :, 1:-1],)

    return _node(x, (a,), back, "pad")


def im2col3(a):
    """Gather 3x3 neighbourhoods of a padded NHWC tensor into (N, H, W, 9C)."""
    x = a.data
    n, hp, wp, c = x.shape
    h, w = hp - 2, wp - 2
    cols = np.concatenate([x[:, dy:dy + h, dx:dx + w] for dy in range(3) for dx in range(3)],
                          axis=-1)

    def back(g):
        out = np.zeros_like(x)
        k = 0
        for dy in range(3):
            for dx in range(3):
                out[:, dy:dy + h, dx:dx + w] += g[..., k * c:(k + 1) * c]
                k += 1
        return (out,)

    return _node(cols, (a,), back, "im2col")


def conv3x3(x, w, b):
    """3x3 'same' convolution on panoramas: NHWC input, weights (9*Cin, Cout)."""
    return affine(im2col3(pad_panorama(as_tensor(x))), w, b)


def avgpool2(a):
    n, h, w, c = a.shape
    out = a.data.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def back(g):
        g = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2)
        return (g * 0.25,)

    return _node(out, (a,), back, "avgpool2")


def upsample2(a):
    out = np.repeat(np.repeat(a.data, 2, axis=1), 2, axis=2)

    def back(g):
        n, h, w, c = g.shape
        return (g.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4)),)

    return _node(out, (a,), back, "upsample2")


PRIMITIVES = {
    "add": add, "sub": sub, "mul": mul, "div": div, "neg": neg, "matmul": matmul,
    "affine": affine, "exp": exp, "log": log, "log1p": log1p, "sin": sin, "cos": cos,
    "square": square, "sqrt": sqrt, "relu": relu, "sigmoid": sigmoid,
    "softplus": softplus, "sum": sum_, "mean": mean, "cumsum": cumsum_exclusive,
    "reshape": reshape, "take": take, "concat": concat, "pad": pad_panorama,
    "im2col": im2col3, "conv3x3": conv3x3, "avgpool2": avgpool2, "upsample2": upsample2,
}

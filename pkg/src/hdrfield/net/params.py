"""Flat parameter storage, Adam, and checkpoint files."""
import json
import os
from pathlib import Path

import numpy as np

from ..errors import DataError
from .tape import Tensor

ADAM_DEFAULTS = dict(lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8)


class ParamStore:
    """All trainable parameters of a model in one flat vector.

    Parameters are declared with :meth:`declare` and become usable after
    :meth:`build`, which hands out tensors whose ``data`` and ``grad`` are
    views into ``values`` and ``grads``.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._pending = []
        self.names = []
        self.slices = {}
        self.tensors = {}
        self.values = None
        self.grads = None
        self.m = None
        self.v = None
        self.step = 0

    def declare(self, name, init):
        if self.values is not None:
            raise RuntimeError("ParamStore already built")
        if name in self.slices or any(n == name for n, _ in self._pending):
            raise ValueError(f"duplicate parameter {name!r}")
        self._pending.append((name, np.asarray(init, dtype=np.float64)))
        return name

    def build(self):
        sizes = [a.size for _, a in self._pending]
        total = int(sum(sizes))
        self.values = np.zeros(total, dtype=self.dtype)
        self.grads = np.zeros(total, dtype=self.dtype)
        self.m = np.zeros(total, dtype=self.dtype)
        self.v = np.zeros(total, dtype=self.dtype)
        offset = 0
        for name, arr in self._pending:
            sl = slice(offset, offset + arr.size)
            self.values[sl] = arr.ravel()
            t = Tensor(self.values[sl].reshape(arr.shape), requires_grad=True)
            t.grad = self.grads[sl].reshape(arr.shape)
            t.is_param = True
            t.op = name
            self.names.append(name)
            self.slices[name] = sl
            self.tensors[name] = t
            offset += arr.size
        self._pending = []
        return self

    def __getitem__(self, name):
        return self.tensors[name]

    def __len__(self):
        return 0 if self.values is None else self.values.size

    def zero_grad(self):
        self.grads[...] = 0


def adam_step(store, grads=None, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update of ``store`` in place.

    Returns False (leaving every parameter and moment untouched) when the
    gradient holds non-finite values.
    """
    g = store.grads if grads is None else np.asarray(grads, dtype=store.dtype)
    if not np.isfinite(g).all():
        return False
    store.step += 1
    t = store.step
    store.m *= beta1
    store.m += (1 - beta1) * g
    store.v *= beta2
    store.v += (1 - beta2) * g * g
    mhat = store.m / (1 - beta1 ** t)
    vhat = store.v / (1 - beta2 ** t)
    store.values -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(store.dtype)
    return True


# ------------------------------------------------------------ checkpoints

MAGIC = "HDRFIELD-CKPT 1"


def save_checkpoint(path, store, kind, config, extra=None):
    """Text header + raw little-endian float32 (values, then Adam m and v).

    Written to a temporary file and renamed, so readers never see a
    partial checkpoint.
    """
    path = Path(path)
    header = {
        "kind": kind,
        "config": config,
        "count": len(store),
        "step": store.step,
        "endian": "little",
        "extra": extra or {},
    }
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write((MAGIC + "\n").encode())
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
        for arr in (store.values, store.m, store.v):
            fh.write(np.asarray(arr, dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns ``(header, values, m, v)`` with arrays as float32."""
    raw = Path(path).read_bytes()
    first = raw.find(b"\n")
    second = raw.find(b"\n", first + 1)
    if first < 0 or second < 0 or raw[:first].decode(errors="replace") != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    header = json.loads(raw[first + 1:second])
    if header.get("endian") != "little":
        raise DataError(f"{path}: unsupported byte order {header.get('endian')!r}")
    n = int(header["count"])
    body = np.frombuffer(raw[second + 1:], dtype="<f4")
    if body.size != 3 * n:
        raise DataError(f"{path}: expected {3 * n} floats, found {body.size}")
    values, m, v = (body[k * n:(k + 1) * n].astype(np.float32) for k in range(3))
    return header, values, m, v


def restore(store, values, m=None, v=None, step=0):
    store.values[...] = values
    if m is not None:
        store.m[...] = m
        store.v[...] = v
    store.step = step


"""Parameters, layers, the Adam optimizer and finite-difference checking."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NonFiniteError, ShapeError

PARAMS_MAGIC = b"CIPS"
PARAMS_VERSION = 1


class ParamSet:
    """Named 2-D parameters with Adam state.

    Parameters are leaf tensors; gradients accumulate on ``tensor.grad``
    until :func:`adam_step` or :meth:`zero_grad` clears them.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name, value):
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        if value.ndim == 1:
            value = value[None, :]
        if value.ndim != 2:
            raise ShapeError(f"parameter {name!r} must be 2-D, got shape {value.shape}")
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        return t

    def remove(self, prefix):
        """Drop every parameter whose name starts with ``prefix + "."``."""
        for name in [n for n in self._params if n.startswith(prefix + ".")]:
            del self._params[name], self.m[name], self.v[name]

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self):
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self):
        return list(self._params)

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def num_values(self):
        return sum(t.data.size for t in self._params.values())

    def state_dict(self):
        return {k: t.data.copy() for k, t in self._params.items()}

    def save(self, path):
        """Binary layout: magic, version, count, then per parameter a
        name-length/name/rows/cols record; values follow as row-major
        little-endian float64 in table order."""
        with open(path, "wb") as fh:
            fh.write(PARAMS_MAGIC)
            fh.write(struct.pack("<II", PARAMS_VERSION, len(self._params)))
            for name, t in self._params.items():
                raw = name.encode("utf-8")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<II", *t.shape))
            for t in self._params.values():
                fh.write(t.data.astype("<f8").tobytes(order="C"))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != PARAMS_MAGIC:
            raise ValueError(f"{path}: not a parameter file")
        version, count = struct.unpack_from("<II", blob, 4)
        if version != PARAMS_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        pos = 12
        table = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            rows, cols = struct.unpack_from("<II", blob, pos)
            pos += 8
            table.append((name, rows, cols))
        out = cls()
        for name, rows, cols in table:
            nbytes = rows * cols * 8
            values = np.frombuffer(blob, dtype="<f8", count=rows * cols, offset=pos)
            pos += nbytes
            out.add(name, values.reshape(rows, cols).astype(np.float64))
        if pos != len(blob):
            raise ValueError(f"{path}: trailing bytes")
        return out


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def add_linear(params, prefix, fan_in, fan_out, rng):
    params.add(f"{prefix}.weight", glorot(rng, fan_in, fan_out))
    params.add(f"{prefix}.bias", np.zeros((1, fan_out)))


def add_mlp(params, prefix, widths, rng):
    """Register ``len(widths) - 1`` linear layers named ``prefix.0``, ``prefix.1``..."""
    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        add_linear(params, f"{prefix}.{i}", a, b, rng)


def mlp(params, prefix, x, depth):
    """Linear layers joined by relu; no activation after the last one."""
    h = x
    for i in range(depth):
        h = layer_apply("linear", h, weight=params[f"{prefix}.{i}.weight"], bias=params[f"{prefix}.{i}.bias"])
        if i < depth - 1:
            h = layer_apply("relu", h)
    return h


LAYER_KINDS = ("linear", "relu", "softmax_rows", "l2_normalize_rows", "sigmoid", "elementwise_mul")


def layer_apply(kind, *inputs, weight=None, bias=None):
    """Apply one registered layer kind to 2-D inputs and check the result."""
    xs = [ad.as_tensor(x) for x in inputs]
    x = xs[0]
    if kind == "linear":
        if weight is None:
            raise ShapeError("linear needs a weight")
        if x.shape[-1] != weight.shape[0]:
            raise ShapeError(f"linear: input width {x.shape[-1]} != weight rows {weight.shape[0]}")
        out = ad.matmul(x, weight)
        if bias is not None:
            if bias.shape[-1] != weight.shape[1]:
                raise ShapeError("linear: bias width mismatch")
            out = ad.add(out, bias)
    elif kind == "relu":
        out = ad.relu(x)
    elif kind == "sigmoid":
        out = ad.sigmoid(x)
    elif kind == "softmax_rows":
        out = ad.softmax(x, axis=-1)
    elif kind == "l2_normalize_rows":
        out = ad.l2_normalize(x, axis=-1)
    elif kind == "elementwise_mul":
        if len(xs) != 2 or xs[0].shape != xs[1].shape:
            raise ShapeError("elementwise_mul needs two inputs of equal shape")
        out = ad.mul(xs[0], xs[1])
    else:
        raise ValueError(f"unknown layer kind {kind!r}")
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteError(f"{kind} produced non-finite values")
    return out


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update over every parameter, then zero grads."""
    grads = {}
    for name, t in params.items():
        g = np.zeros_like(t.data) if t.grad is None else t.grad
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {name}")
        grads[name] = g
    params.step += 1
    bc1 = 1.0 - beta1 ** params.step
    bc2 = 1.0 - beta2 ** params.step
    for name, t in params.items():
        g = grads[name]
        params.m[name] = beta1 * params.m[name] + (1.0 - beta1) * g
        params.v[name] = beta2 * params.v[name] + (1.0 - beta2) * g * g
        m_hat = params.m[name] / bc1
        v_hat = params.v[name] / bc2
        t.data = t.data - lr * m_hat / (np.sqrt(v_hat) + eps)
        t.grad = None
    return params


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    skipped: list = field(default_factory=list)  # (name, flat index) at kinks
    worst: tuple | None = None


def grad_check_report(loss_fn, params, samples, seed, h=1e-5, floor=1e-6):
    """Compare analytic gradients to central differences at random coordinates.

    ``loss_fn(params)`` must return a scalar :class:`Tensor`. A coordinate
    whose one-sided differences disagree sharply is treated as sitting on a
    kink (relu at zero, a clamp boundary) and skipped.
    """
    params.zero_grad()
    loss_fn(params).backward()
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for name, t in params.items()}
    params.zero_grad()

    names = params.names()
    sizes = np.array([params[n].data.size for n in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    rng = np.random.default_rng(seed)
    total = int(offsets[-1])
    picks = rng.choice(total, size=min(samples, total), replace=False)

    report = GradCheckReport(0.0, 0)
    for flat in np.sort(picks):
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        name = names[which]
        idx = np.unravel_index(int(flat - offsets[which]), params[name].shape)
        data = params[name].data
        orig = data[idx]
        data[idx] = orig + h
        f_plus = loss_fn(params).item()
        data[idx] = orig - h
        f_minus = loss_fn(params).item()
        data[idx] = orig
        f0 = loss_fn(params).item()
        fwd, bwd = (f_plus - f0) / h, (f0 - f_minus) / h
        numeric = (f_plus - f_minus) / (2 * h)
        scale = max(abs(fwd), abs(bwd), 1e-6)
        if abs(fwd - bwd) > 1e-2 * scale and abs(fwd - bwd) > 1e-4:
            report.skipped.append((name, idx))
            continue
        a = analytic[name][idx]
        err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
        report.checked += 1
        if err > report.max_rel_error:
            report.max_rel_error = float(err)
            report.worst = (name, idx, float(a), float(numeric))
    params.zero_grad()
    return report


def grad_check(loss_fn, params, samples, seed, h=1e-5):
    """Largest relative analytic-vs-numeric gradient error over sampled coordinates."""
    return grad_check_report(loss_fn, params, samples, seed, h).max_rel_error

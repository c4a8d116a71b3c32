"""Minimal dense tensor engine with reverse-mode differentiation.

Values live in numpy arrays (float32 for training, float64 for gradient
verification). Operations record pullback closures on the active Tape;
``backward`` replays the tape in reverse and accumulates gradients
additively across fan-out. Single-threaded evaluation order is fixed, so
identical inputs and seeds reproduce results bitwise.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

DEFAULT_DTYPE = np.float32


class Tensor:
    """Dense array plus optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return self.data.item()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of operations; build order is topological order."""

    _stack: list["Tape"] = []

    def __init__(self):
        self.ops = []  # list of (out_tensor, [(input_tensor, pullback), ...])

    def __enter__(self):
        Tape._stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        Tape._stack.pop()
        return False

    @classmethod
    def active(cls):
        return cls._stack[-1] if cls._stack else None


def constant(data, dtype=None):
    return Tensor(data, requires_grad=False, dtype=dtype)


def parameter(data, dtype=None):
    return Tensor(data, requires_grad=True, dtype=dtype)


def _record(out, pairs):
    """Attach pullbacks for the inputs that need gradients, if taping."""
    tape = Tape.active()
    if tape is None:
        return out
    live = [(inp, fn) for inp, fn in pairs if inp.requires_grad]
    if live:
        out.requires_grad = True
        out._tape = tape
        tape.ops.append((out, live))
    return out


def _unbroadcast(g, shape):
    """Sum a gradient down to the shape it was broadcast from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data)
    return _record(out, [
        (a, lambda g: g @ b.data.T),
        (b, lambda g: a.data.T @ g),
    ])


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    return _record(out, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ])


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data)
    return _record(out, [
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ])


def scale(a: Tensor, k: float) -> Tensor:
    out = Tensor(a.data * a.data.dtype.type(k))
    return _record(out, [(a, lambda g: g * a.data.dtype.type(k))])


def concat(parts, axis=-1) -> Tensor:
    datas = [p.data for p in parts]
    out = Tensor(np.concatenate(datas, axis=axis))
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def make_fn(i):
        lo, hi = offsets[i], offsets[i + 1]

        def fn(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        return fn

    return _record(out, [(p, make_fn(i)) for i, p in enumerate(parts)])


def slice_(a: Tensor, key) -> Tensor:
    out = Tensor(a.data[key].copy())

    def fn(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return full

    return _record(out, [(a, fn)])


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T.copy())
    return _record(out, [(a, lambda g: g.T)])


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape).copy())
    return _record(out, [(a, lambda g: g.reshape(a.data.shape))])


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))
    return _record(out, [(a, lambda g: g * (a.data > 0))])


def sigmoid(a: Tensor) -> Tensor:
    # stable piecewise form, exact at 0
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x)))).astype(x.dtype)
    out = Tensor(y)
    return _record(out, [(a, lambda g: g * y * (1 - y))])


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)
    return _record(out, [(a, lambda g: g * (1 - y * y))])


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return _record(out, [(a, lambda g: g / a.data)])


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    y = np.clip(a.data, lo, hi)
    out = Tensor(y)
    inside = (a.data > lo) & (a.data < hi)
    return _record(out, [(a, lambda g: g * inside)])


def softmax(a: Tensor, axis=-1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def fn(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return y * (g - dot)

    return _record(out, [(a, fn)])


def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))

    def fn(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).astype(a.data.dtype)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.data.shape).astype(a.data.dtype)

    return _record(out, [(a, fn)])


def mean_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims))

    def fn(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape) / n).astype(a.data.dtype)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape) / n).astype(a.data.dtype)

    return _record(out, [(a, fn)])


def cosine(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity. 1-D inputs give a scalar, 2-D inputs are row-wise.

    Any zero vector yields similarity 0 with zero gradient.
    """
    if u.data.ndim == 1:
        nu = np.linalg.norm(u.data)
        nv = np.linalg.norm(v.data)
        if nu == 0.0 or nv == 0.0:
            out = Tensor(np.zeros((), dtype=u.data.dtype))
            return _record(out, [(u, lambda g: np.zeros_like(u.data)),
                                 (v, lambda g: np.zeros_like(v.data))])
        c = float(u.data @ v.data) / (nu * nv)
        out = Tensor(np.asarray(c, dtype=u.data.dtype))

        def fu(g):
            return g * (v.data / (nu * nv) - c * u.data / (nu * nu))

        def fv(g):
            return g * (u.data / (nu * nv) - c * v.data / (nv * nv))

        return _record(out, [(u, fu), (v, fv)])

    if u.data.shape != v.data.shape or u.data.ndim != 2:
        raise ValueError(f"cosine: incompatible shapes {u.data.shape}, {v.data.shape}")
    nu = np.linalg.norm(u.data, axis=1)
    nv = np.linalg.norm(v.data, axis=1)
    ok = (nu > 0) & (nv > 0)
    denom = np.where(ok, nu * nv, 1.0)
    c = np.where(ok, (u.data * v.data).sum(axis=1) / denom, 0.0).astype(u.data.dtype)
    out = Tensor(c)
    nu_s = np.where(ok, nu, 1.0)
    nv_s = np.where(ok, nv, 1.0)

    def fu(g):
        gg = (g * ok)[:, None]
        return gg * (v.data / denom[:, None] - (c / (nu_s * nu_s))[:, None] * u.data)

    def fv(g):
        gg = (g * ok)[:, None]
        return gg * (u.data / denom[:, None] - (c / (nv_s * nv_s))[:, None] * v.data)

    return _record(out, [(u, fu), (v, fv)])


def dropout(a: Tensor, p: float, train: bool, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not train or p == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype)
    mask = keep / a.data.dtype.type(1.0 - p)
    out = Tensor(a.data * mask)
    return _record(out, [(a, lambda g: g * mask)])


def group_sum(h: Tensor, assign: np.ndarray, n_groups: int) -> Tensor:
    """Row-group sums: out[j] = sum of h rows assigned to group j.

    This is exactly S^T @ h for the one-hot assignment matrix S, computed
    by indexed accumulation. Permutation assignments copy rows bitwise.
    """
    assign = np.asarray(assign, dtype=np.int64)
    if n_groups == assign.size and np.array_equal(np.sort(assign), np.arange(n_groups)):
        pos = np.empty(n_groups, dtype=np.int64)
        pos[assign] = np.arange(assign.size)
        out_data = h.data[pos].copy()
    else:
        out_data = np.zeros((n_groups,) + h.data.shape[1:], dtype=h.data.dtype)
        np.add.at(out_data, assign, h.data)
    out = Tensor(out_data)
    return _record(out, [(h, lambda g: g[assign])])


def backward(loss: Tensor):
    """Reverse sweep from a scalar loss; accumulates into .grad fields."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    tape = loss._tape
    if tape is None:
        raise ValueError("loss was not recorded on a tape (no grad path)")
    loss.grad = np.ones_like(loss.data)
    for out, pairs in reversed(tape.ops):
        if out.grad is None:
            continue
        for inp, fn in pairs:
            g = fn(out.grad)
            g = np.asarray(g, dtype=inp.data.dtype).reshape(inp.data.shape)
            if inp.grad is None:
                inp.grad = g.copy()
            else:
                inp.grad += g


def zero_grads(params):
    for p in (params.values() if isinstance(params, dict) else params):
        p.grad = None


@dataclass
class AdamState:
    """First/second moment accumulators plus hyperparameters."""

    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, state: AdamState):
    """One Adam update with bias correction; fails fast on NaN gradients."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter '{name}'")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / (1.0 - state.beta1 ** t)
        vhat = v / (1.0 - state.beta2 ** t)
        p.data -= (state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.data.dtype)


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype=DEFAULT_DTYPE) -> Tensor:
    """uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) parameter."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return parameter(rng.uniform(-bound, bound, size=shape), dtype=dtype)


def grad_check(loss_fn, params: dict, epsilon=1e-5, samples_per_tensor=50, seed=0) -> float:
    """Compare tape gradients against central finite differences.

    ``loss_fn`` must recompute the scalar loss from current parameter
    values. Run in float64 for the comparison to mean anything. Samples
    at least ``samples_per_tensor`` coordinates per tensor (all of them
    for small tensors). Returns the max relative error with denominator
    max(|a|, |b|, 1e-8).
    """
    with Tape():
        loss = loss_fn()
        backward(loss)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}
    zero_grads(params)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= samples_per_tensor:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=samples_per_tensor, replace=False)
        ana = analytic[name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + epsilon
            hi = float(loss_fn().data)
            flat[c] = orig - epsilon
            lo = float(loss_fn().data)
            flat[c] = orig
            num = (hi - lo) / (2.0 * epsilon)
            denom = max(abs(num), abs(float(ana[c])), 1e-8)
            worst = max(worst, abs(num - float(ana[c])) / denom)
    return worst


CHECKPOINT_MANIFEST = "manifest.json"
CHECKPOINT_PARAMS = "params.bin"


def save_checkpoint(path: str, params: dict, config: dict):
    """Write manifest.json plus params.bin (little-endian raw values)."""
    os.makedirs(path, exist_ok=True)
    entries = []
    offset = 0
    blobs = []
    for name, p in params.items():
        arr = np.ascontiguousarray(p.data)
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        entries.append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
            "offset": offset,
            "len": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    manifest = {"tensors": entries, "config": config, "format_version": 1}
    with open(os.path.join(path, CHECKPOINT_MANIFEST), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(path, CHECKPOINT_PARAMS), "wb") as f:
        for raw in blobs:
            f.write(raw)


def load_checkpoint(path: str):
    """Read a checkpoint directory; returns ({name: ndarray}, config)."""
    with open(os.path.join(path, CHECKPOINT_MANIFEST), encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("format_version") != 1:
        raise ValueError(f"unsupported checkpoint format_version: {manifest.get('format_version')}")
    with open(os.path.join(path, CHECKPOINT_PARAMS), "rb") as f:
        blob = f.read()
    tensors = {}
    for e in manifest["tensors"]:
        raw = blob[e["offset"]:e["offset"] + e["len"]]
        arr = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
        tensors[e["name"]] = arr
    return tensors, manifest["config"]

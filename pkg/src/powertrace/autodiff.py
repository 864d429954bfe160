"""Dense-tensor numerical core with reverse-mode differentiation.

A `Tape` records every op output in creation order, which is already a valid
topological order, so `backward` is a single reverse sweep. Ops executed with
no active tape run forward-only (used for inference). All arithmetic is
64-bit; any op producing NaN/Inf raises NumericError immediately.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from .core import NumericError, ShapeError


class Tensor:
    """Row-major float64 array plus the hooks backward needs."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Recorded op graph for one forward pass."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self.nodes)


_TAPE_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _node(data: np.ndarray, parents: tuple, backward) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NumericError("op produced non-finite output")
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None:
        out._parents = parents
        out._backward = backward
        tape.nodes.append(out)
    return out


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    ad, bd = _as_array(a), _as_array(b)
    out_data = ad + bd

    def backward(g, acc):
        if isinstance(a, Tensor):
            acc(a, _unbroadcast(g, ad.shape))
        if isinstance(b, Tensor):
            acc(b, _unbroadcast(g, bd.shape))

    return _node(out_data, _tensor_parents(a, b), backward)


def sub(a, b) -> Tensor:
    ad, bd = _as_array(a), _as_array(b)
    out_data = ad - bd

    def backward(g, acc):
        if isinstance(a, Tensor):
            acc(a, _unbroadcast(g, ad.shape))
        if isinstance(b, Tensor):
            acc(b, _unbroadcast(-g, bd.shape))

    return _node(out_data, _tensor_parents(a, b), backward)


def mul(a, b) -> Tensor:
    ad, bd = _as_array(a), _as_array(b)
    out_data = ad * bd

    def backward(g, acc):
        if isinstance(a, Tensor):
            acc(a, _unbroadcast(g * bd, ad.shape))
        if isinstance(b, Tensor):
            acc(b, _unbroadcast(g * ad, bd.shape))

    return _node(out_data, _tensor_parents(a, b), backward)


def matmul(a, b) -> Tensor:
    ad, bd = _as_array(a), _as_array(b)
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {ad.shape} @ {bd.shape}")
    out_data = ad @ bd

    def backward(g, acc):
        if isinstance(a, Tensor):
            acc(a, _unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape))
        if isinstance(b, Tensor):
            acc(b, _unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape))

    return _node(out_data, _tensor_parents(a, b), backward)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    # two-branch form avoids overflow in exp for large |x|
    out_data = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))),
                        np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))

    def backward(g, acc):
        acc(x, g * out_data * (1.0 - out_data))

    return _node(out_data, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out_data = np.tanh(x.data)

    def backward(g, acc):
        acc(x, g * (1.0 - out_data * out_data))

    return _node(out_data, (x,), backward)


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0.0)

    def backward(g, acc):
        acc(x, g * (x.data > 0.0))

    return _node(out_data, (x,), backward)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=-1, keepdims=True)

    def backward(g, acc):
        inner = (g * out_data).sum(axis=-1, keepdims=True)
        acc(x, out_data * (g - inner))

    return _node(out_data, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    xd = x.data
    d = xd.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"layer_norm scale/shift shapes {gamma.data.shape}/{beta.data.shape} "
            f"vs feature dim ({d},)"
        )
    mu = xd.mean(axis=-1, keepdims=True)
    xmu = xd - mu
    var = (xmu * xmu).mean(axis=-1, keepdims=True)
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = xmu * ivar
    out_data = xhat * gamma.data + beta.data

    def backward(g, acc):
        reduce_axes = tuple(range(g.ndim - 1))
        acc(beta, g.sum(axis=reduce_axes))
        acc(gamma, (g * xhat).sum(axis=reduce_axes))
        dxhat = g * gamma.data
        acc(
            x,
            ivar / d * (
                d * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            ),
        )

    return _node(out_data, (x, gamma, beta), backward)


def causal_dilated_conv1d(x: Tensor, kernel: Tensor, bias: Tensor, dilation: int = 1) -> Tensor:
    """1-D convolution over time reading only past samples.

    x: (B, W, C_in); kernel: (k, C_in, C_out); bias: (C_out,).
    The input is left-padded with (k-1)*dilation zeros so the output keeps
    length W; tap j of the kernel reads the sample (k-1-j)*dilation steps
    in the past.
    """
    xd, kd = x.data, kernel.data
    if xd.ndim != 3 or kd.ndim != 3:
        raise ShapeError(f"conv expects (B,W,C) and (k,Cin,Cout), got {xd.shape}, {kd.shape}")
    k, c_in, c_out = kd.shape
    if xd.shape[-1] != c_in:
        raise ShapeError(f"conv channel mismatch: input {xd.shape} vs kernel {kd.shape}")
    if dilation < 1:
        raise ValueError(f"dilation must be >= 1, got {dilation}")
    b_sz, w, _ = xd.shape
    pad = (k - 1) * dilation
    xp = np.zeros((b_sz, w + pad, c_in))
    xp[:, pad:, :] = xd
    out_data = np.tile(bias.data, (b_sz, w, 1))
    for j in range(k):
        out_data += xp[:, j * dilation : j * dilation + w, :] @ kd[j]

    def backward(g, acc):
        acc(bias, g.sum(axis=(0, 1)))
        dk = np.empty_like(kd)
        for j in range(k):
            sl = xp[:, j * dilation : j * dilation + w, :]
            dk[j] = np.einsum("btc,bto->co", sl, g)
        acc(kernel, dk)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dxp[:, j * dilation : j * dilation + w, :] += g @ kd[j].T
        acc(x, dxp[:, pad:, :])

    return _node(out_data, (x, kernel, bias), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout: surviving units scale by 1/(1-p), so E[out] = in.

    p=0 is an exact identity (no node recorded). Callers disable dropout by
    passing p=0, not by omitting the rng.
    """
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must satisfy 0 <= p < 1, got {p}")
    if p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout with p > 0 requires an rng")
    keep = (rng.random(x.data.shape) >= p) / (1.0 - p)
    out_data = x.data * keep

    def backward(g, acc):
        acc(x, g * keep)

    return _node(out_data, (x,), backward)


def mse_loss(pred: Tensor, target) -> Tensor:
    td = _as_array(target)
    if pred.data.shape != td.shape:
        raise ShapeError(f"mse shapes differ: {pred.data.shape} vs {td.shape}")
    diff = pred.data - td
    out_data = np.asarray((diff * diff).mean())

    def backward(g, acc):
        acc(pred, g * 2.0 * diff / diff.size)
        if isinstance(target, Tensor):
            acc(target, g * -2.0 * diff / diff.size)

    return _node(out_data, _tensor_parents(pred, target), backward)


def reshape(x: Tensor, shape) -> Tensor:
    out_data = x.data.reshape(shape)

    def backward(g, acc):
        acc(x, g.reshape(x.data.shape))

    return _node(out_data, (x,), backward)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out_data = np.transpose(x.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward(g, acc):
        acc(x, np.transpose(g, inverse))

    return _node(out_data, (x,), backward)


def slice_axis(x: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * x.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out_data = x.data[index]

    def backward(g, acc):
        full = np.zeros_like(x.data)
        full[index] = g
        acc(x, full)

    return _node(out_data, (x,), backward)


def scale(x: Tensor, c: float) -> Tensor:
    out_data = x.data * c

    def backward(g, acc):
        acc(x, g * c)

    return _node(out_data, (x,), backward)


def _tensor_parents(*args) -> tuple:
    return tuple(a for a in args if isinstance(a, Tensor))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def backward(tape: Tape, loss: Tensor, store: "ParamStore | None" = None, inputs=()) -> dict[str, np.ndarray]:
    """Reverse sweep over the tape from a scalar loss.

    Returns gradients for every parameter in `store` (zeros for parameters
    the loss never touched). Tensors passed via `inputs` get their gradient
    attached as `.grad` (zeros if unused).
    """
    if not tape.nodes:
        raise ValueError("backward on an empty tape")
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    def acc(t: Tensor, g: np.ndarray):
        key = id(t)
        if key in grads:
            grads[key] = grads[key] + g
        else:
            grads[key] = g

    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None or node._backward is None:
            continue
        node._backward(g, acc)

    for t in inputs:
        t.grad = grads.get(id(t), np.zeros_like(t.data))

    if store is None:
        return {}
    return {
        name: grads.get(id(p), np.zeros_like(p.data))
        for name, p in store.params.items()
    }


# ---------------------------------------------------------------------------
# parameters and Adam
# ---------------------------------------------------------------------------


class ParamStore:
    """Named parameter tensors plus per-parameter Adam state."""

    def __init__(self):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.steps: dict[str, int] = {}
        self._frozen = False

    def add(self, name: str, values: np.ndarray) -> Tensor:
        if self._frozen:
            raise RuntimeError("parameter shapes are frozen after build")
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(values, dtype=np.float64))
        self.params[name] = t
        self.m[name] = np.zeros_like(t.data)
        self.v[name] = np.zeros_like(t.data)
        self.steps[name] = 0
        return t

    def freeze(self):
        self._frozen = True

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    def n_scalars(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, values in snap.items():
            self.params[name].data = values.copy()


def adam_step(
    store: ParamStore,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update over every parameter in the store.

    Aborts before touching any state if a gradient is non-finite.
    """
    for name in store.params:
        g = grads.get(name)
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name!r}")
    for name, p in store.params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        store.steps[name] += 1
        t = store.steps[name]
        store.m[name] = beta1 * store.m[name] + (1.0 - beta1) * g
        store.v[name] = beta2 * store.v[name] + (1.0 - beta2) * (g * g)
        m_hat = store.m[name] / (1.0 - beta1**t)
        v_hat = store.v[name] / (1.0 - beta2**t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)


def uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform in +-1/sqrt(fan_in)."""
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

CHECKPOINT_FORMAT = "powertrace-params-v1"


def save_params(store: ParamStore, json_path, bin_path, extra: dict | None = None) -> None:
    """JSON manifest plus one flat little-endian float64 blob per tensor.

    Blobs are concatenated in manifest order; offsets are element counts.
    """
    tensors = []
    offset = 0
    blobs = []
    for name, p in store.params.items():
        flat = np.ascontiguousarray(p.data, dtype="<f8").reshape(-1)
        tensors.append(
            {"name": name, "shape": list(p.data.shape), "offset": offset, "numel": int(flat.size)}
        )
        blobs.append(flat)
        offset += flat.size
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "tensors": tensors,
        "steps": dict(store.steps),
    }
    if extra:
        manifest.update(extra)
    with open(json_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(bin_path, "wb") as fh:
        if blobs:
            fh.write(np.concatenate(blobs).tobytes())


def load_params(json_path, bin_path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(json_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a parameter checkpoint: {json_path}")
    raw = np.fromfile(os.fspath(bin_path), dtype="<f8")
    arrays = {}
    for entry in manifest["tensors"]:
        lo = entry["offset"]
        hi = lo + entry["numel"]
        arrays[entry["name"]] = raw[lo:hi].reshape(entry["shape"]).astype(np.float64)
    return manifest, arrays

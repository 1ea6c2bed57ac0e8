"""Dense float32 tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array and remembers how it was produced; calling
`backward()` on a scalar loss walks the graph in reverse topological order
and accumulates gradients into every leaf marked `requires_grad`. Grads
accumulate across backward calls until `zero_grad`, which is the documented
behavior, not an error.

All storage and accumulation is 32-bit (numpy reductions use pairwise
summation, which keeps them stable at this scale). Stochastic ops take an
explicit numpy Generator so every run is reproducible from one seed.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError

DTYPE = np.float32


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward_fn = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        if self.data.size != 1:
            raise ValidationError(f"backward() needs a scalar loss, got shape {self.shape}")
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, grad={'yes' if self.grad is not None else 'no'})"

    # operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)


def parameter(data, rng: Optional[np.random.Generator] = None, scale: Optional[float] = None) -> Tensor:
    """A trainable leaf. With `rng`, `data` is a shape and values are drawn
    uniformly in (-scale, scale), scale defaulting to 1/sqrt(fan_in)."""
    if rng is not None:
        shape = tuple(data)
        fan_in = shape[0] if len(shape) == 1 else shape[-2] if len(shape) >= 2 else 1
        s = scale if scale is not None else 1.0 / np.sqrt(max(fan_in, 1))
        data = rng.uniform(-s, s, size=shape)
    return Tensor(data, requires_grad=True)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.astype(DTYPE, copy=False)


def _binary(a, b, out_data, da, db) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    req = a.requires_grad or b.requires_grad or a._parents or b._parents

    def backward(g):
        if a.requires_grad or a._parents:
            a._accumulate(_unbroadcast(da(g), a.shape))
        if b.requires_grad or b._parents:
            b._accumulate(_unbroadcast(db(g), b.shape))

    return Tensor(out_data, _parents=(a, b) if req else (), _backward=backward if req else None)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ValidationError(f"add: incompatible shapes {a.shape} and {b.shape}")
    return _binary(a, b, out, lambda g: g, lambda g: g)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ValidationError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    return _binary(a, b, out, lambda g: g * b.data, lambda g: g * a.data)


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValidationError(f"matmul: operands must be >= 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValidationError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.data @ b.data

    def da(g):
        return g @ np.swapaxes(b.data, -1, -2)

    def db(g):
        return np.swapaxes(a.data, -1, -2) @ g

    return _binary(a, b, out, da, db)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ValidationError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    out = table.data[ids]

    def backward(g):
        if table.requires_grad or table._parents:
            gt = np.zeros_like(table.data)
            np.add.at(gt, ids, g)
            table._accumulate(gt)

    return Tensor(out, _parents=(table,), _backward=backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        if x.requires_grad or x._parents:
            dot = (g * y).sum(axis=axis, keepdims=True)
            x._accumulate(y * (g - dot))

    return Tensor(y, _parents=(x,), _backward=backward)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = _wrap(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def backward(g):
        if x.requires_grad or x._parents:
            x._accumulate(g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    return Tensor(y, _parents=(x,), _backward=backward)


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood of integer targets; masked positions
    (mask == 0) are excluded from the average, which is how padding drops out."""
    logits = _wrap(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != logits.shape[:1]:
        raise ValidationError(
            f"cross_entropy: logits {logits.shape} vs targets {targets.shape}"
        )
    m = np.ones(len(targets), dtype=DTYPE) if mask is None else np.asarray(mask, dtype=DTYPE)
    count = m.sum()
    if count == 0:
        raise ValidationError("cross_entropy: mask excludes every position")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(len(targets))
    loss = -(logp[rows, targets] * m).sum() / count

    def backward(g):
        if logits.requires_grad or logits._parents:
            p = np.exp(logp)
            p[rows, targets] -= 1.0
            logits._accumulate(g * p * (m / count)[:, None])

    return Tensor(loss, _parents=(logits,), _backward=backward)


def mse(pred, target) -> Tensor:
    pred, target = _wrap(pred), _wrap(target)
    if pred.shape != target.shape:
        raise ValidationError(f"mse: shapes differ, {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = (diff * diff).sum() / n
    return _binary(pred, target, out, lambda g: g * 2.0 * diff / n, lambda g: -g * 2.0 * diff / n)


def cosine_similarity(a, b, axis: int = -1, eps: float = 1e-8) -> Tensor:
    """Per-sample cosine along `axis`; zero-norm inputs give 0 with zero grads."""
    a, b = _wrap(a), _wrap(b)
    if a.shape != b.shape:
        raise ValidationError(f"cosine_similarity: shapes differ, {a.shape} vs {b.shape}")
    na = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    nb = np.sqrt((b.data * b.data).sum(axis=axis, keepdims=True))
    denom = np.maximum(na * nb, eps)
    ok = ((na > eps) & (nb > eps)).astype(DTYPE)
    dot = (a.data * b.data).sum(axis=axis, keepdims=True)
    cos = ok * dot / denom
    out = np.squeeze(cos, axis=axis)

    def da(g):
        ge = np.expand_dims(g, axis)
        return ge * ok * (b.data / denom - cos * a.data / np.maximum(na * na, eps))

    def db(g):
        ge = np.expand_dims(g, axis)
        return ge * ok * (a.data / denom - cos * b.data / np.maximum(nb * nb, eps))

    return _binary(a, b, out, da, db)


def tanh(x) -> Tensor:
    x = _wrap(x)
    y = np.tanh(x.data)

    def backward(g):
        if x.requires_grad or x._parents:
            x._accumulate(g * (1.0 - y * y))

    return Tensor(y, _parents=(x,), _backward=backward)


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    y = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g):
        if x.requires_grad or x._parents:
            x._accumulate(g * y * (1.0 - y))

    return Tensor(y, _parents=(x,), _backward=backward)


def relu(x) -> Tensor:
    x = _wrap(x)
    y = np.maximum(x.data, 0.0)

    def backward(g):
        if x.requires_grad or x._parents:
            x._accumulate(g * (x.data > 0))

    return Tensor(y, _parents=(x,), _backward=backward)


def dropout(x, keep_prob: float, train: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Inverted dropout: survivors are rescaled by 1/keep_prob. Identity at eval."""
    x = _wrap(x)
    if not 0.0 < keep_prob <= 1.0:
        raise ValidationError(f"dropout: keep_prob must be in (0, 1], got {keep_prob}")
    if not train or keep_prob == 1.0:
        return x
    if rng is None:
        raise ValidationError("dropout: training mode needs an explicit rng stream")
    mask = (rng.random(x.shape) < keep_prob).astype(DTYPE) / DTYPE(keep_prob)

    def backward(g):
        if x.requires_grad or x._parents:
            x._accumulate(g * mask)

    return Tensor(x.data * mask, _parents=(x,), _backward=backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis if axis >= 0 else t.ndim + axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad or t._parents:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return Tensor(out, _parents=tuple(tensors), _backward=backward)


def layer_norm(x, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x = _wrap(x)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValidationError(
            f"layer_norm: gain/bias {gain.shape}/{bias.shape} must match feature dim ({d},)"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = xc * inv
    out = y * gain.data + bias.data

    def backward(g):
        if bias.requires_grad or bias._parents:
            bias._accumulate(g.reshape(-1, d).sum(axis=0))
        if gain.requires_grad or gain._parents:
            gain._accumulate((g * y).reshape(-1, d).sum(axis=0))
        if x.requires_grad or x._parents:
            gy = g * gain.data
            x._accumulate(
                inv * (gy - gy.mean(axis=-1, keepdims=True)
                       - y * (gy * y).mean(axis=-1, keepdims=True))
            )

    return Tensor(out, _parents=(x, gain, bias), _backward=backward)


# shape utilities -----------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = _wrap(x)
    out = x.data.reshape(shape)

    def backward(g):
        if x.requires_grad or x._parents:
            x._accumulate(g.reshape(x.shape))

    return Tensor(out, _parents=(x,), _backward=backward)


def transpose(x, axes) -> Tensor:
    x = _wrap(x)
    out = x.data.transpose(axes)
    inv = np.argsort(axes)

    def backward(g):
        if x.requires_grad or x._parents:
            x._accumulate(g.transpose(inv))

    return Tensor(out, _parents=(x,), _backward=backward)


def take(x, idx) -> Tensor:
    x = _wrap(x)
    out = x.data[idx]
    plain = isinstance(idx, (int, slice)) or (
        isinstance(idx, tuple) and all(isinstance(i, (int, slice)) for i in idx)
    )

    def backward(g):
        if x.requires_grad or x._parents:
            gx = np.zeros_like(x.data)
            if plain:
                gx[idx] += g
            else:
                np.add.at(gx, idx, g)
            x._accumulate(gx)

    return Tensor(out, _parents=(x,), _backward=backward)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if x.requires_grad or x._parents:
            if axis is None:
                x._accumulate(np.broadcast_to(g, x.shape).astype(DTYPE))
            else:
                ge = g if keepdims else np.expand_dims(g, axis)
                x._accumulate(np.broadcast_to(ge, x.shape).astype(DTYPE))

    return Tensor(out, _parents=(x,), _backward=backward)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _wrap(x)
    n = x.data.size if axis is None else x.shape[axis]
    return mul(tsum(x, axis=axis, keepdims=keepdims), 1.0 / n)

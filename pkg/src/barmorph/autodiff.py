"""Reverse-mode automatic differentiation over dense float64 numpy arrays.

A dynamic tape: every op returns a :class:`Tensor` holding its value, its
parents, and a closure that routes the output gradient to them.  Calling
:func:`backward` on a scalar loss walks the tape in reverse topological order
and accumulates gradients into every tensor with ``requires_grad``
(parameters, and anything computed from them).

The op set is what a small transformer VAE needs: matmul, broadcast add/mul,
concat/split, gather (embedding lookup), masked softmax, layer norm, relu /
parametric relu / gelu / sigmoid / softplus, log, sum / mean, cross-entropy,
gaussian reparameterization, and a clamp used by the free-bits loss.
All training math runs in float64 so finite-difference checks have headroom.
"""

from __future__ import annotations

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NotScalarLoss(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, grad={'set' if self.grad is not None else 'none'})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64)
        else:
            self.grad += grad

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __sub__(self, other):
        return add(self, mul(_lift(other), _lift(-1.0)))

    def __rsub__(self, other):
        return add(_lift(other), mul(self, _lift(-1.0)))

    def __neg__(self):
        return mul(self, _lift(-1.0))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division unsupported; divide by scalars")
        return mul(self, _lift(1.0 / other))

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data) -> Tensor:
    """Constant (no gradient) tensor."""
    return Tensor(data)


def parameter(data, name: str) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a gradient back to the pre-broadcast shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss through the tape."""
    if loss.data.size != 1:
        raise NotScalarLoss(f"loss has shape {loss.data.shape}")

    # Reverse topological order via iterative post-order DFS.
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))

    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# Elementwise / broadcast ops

def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return Tensor(out_data, _parents=(a, b), _backward=bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, _parents=(a, b), _backward=bwd)


def log(a: Tensor) -> Tensor:
    def bwd(g):
        a._accumulate(g / a.data)

    return Tensor(np.log(a.data), _parents=(a,), _backward=bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g):
        a._accumulate(g * mask)

    return Tensor(np.where(mask, a.data, 0.0), _parents=(a,), _backward=bwd)


def prelu(a: Tensor, alpha: Tensor) -> Tensor:
    """Parametric ReLU with a learnable (scalar) negative slope."""
    mask = a.data > 0
    out_data = np.where(mask, a.data, alpha.data * a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * np.where(mask, 1.0, alpha.data))
        if alpha.requires_grad:
            alpha._accumulate(_unbroadcast(g * np.where(mask, 0.0, a.data), alpha.data.shape))

    return Tensor(out_data, _parents=(a, alpha), _backward=bwd)


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximated GELU with its exact analytic derivative."""
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * x2 * x))

    def bwd(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
        a._accumulate(g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner))

    return Tensor(0.5 * x * (1.0 + t), _parents=(a,), _backward=bwd)


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid_np(a.data)

    def bwd(g):
        a._accumulate(g * y * (1.0 - y))

    return Tensor(y, _parents=(a,), _backward=bwd)


def _sigmoid_np(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + e^x), computed stably; derivative is the sigmoid."""
    x = a.data
    y = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    def bwd(g):
        a._accumulate(g * _sigmoid_np(x))

    return Tensor(y, _parents=(a,), _backward=bwd)


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """max(a, floor); gradient flows only where a >= floor."""
    mask = a.data >= floor

    def bwd(g):
        a._accumulate(g * mask)

    return Tensor(np.maximum(a.data, floor), _parents=(a,), _backward=bwd)


# ---------------------------------------------------------------------------
# Shape ops

def reshape(a: Tensor, shape) -> Tensor:
    orig = a.data.shape

    def bwd(g):
        a._accumulate(g.reshape(orig))

    return Tensor(a.data.reshape(shape), _parents=(a,), _backward=bwd)


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)

    def bwd(g):
        a._accumulate(g.transpose(inv))

    return Tensor(a.data.transpose(axes), _parents=(a,), _backward=bwd)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    base = tensors[0].data.shape
    ax = axis % len(base)
    for t in tensors[1:]:
        s = t.data.shape
        if len(s) != len(base) or any(
            i != ax and s[i] != base[i] for i in range(len(base))
        ):
            raise ShapeMismatch(f"concat of {[t.data.shape for t in tensors]} on axis {axis}")
    sizes = [t.data.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, start, end in zip(tensors, offsets, offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(start, end)
                t._accumulate(g[tuple(idx)])

    return Tensor(
        np.concatenate([t.data for t in tensors], axis=ax),
        _parents=tuple(tensors),
        _backward=bwd,
    )


def split(a: Tensor, sizes: list[int], axis: int = -1) -> list[Tensor]:
    ax = axis % a.data.ndim
    if sum(sizes) != a.data.shape[ax]:
        raise ShapeMismatch(f"split sizes {sizes} != axis length {a.data.shape[ax]}")
    offsets = np.cumsum([0] + list(sizes))
    outs = []
    for start, end in zip(offsets, offsets[1:]):
        idx = [slice(None)] * a.data.ndim
        idx[ax] = slice(int(start), int(end))
        idx = tuple(idx)

        def bwd(g, idx=idx):
            full = np.zeros_like(a.data)
            full[idx] = g
            a._accumulate(full)

        outs.append(Tensor(a.data[idx], _parents=(a,), _backward=bwd))
    return outs


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row gather: out[..., :] = table[ids[...], :].  Also used to expand
    per-bar condition vectors to per-timestep ones."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ShapeMismatch(f"ids outside table of {table.data.shape[0]} rows")

    def bwd(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
        table._accumulate(grad)

    return Tensor(table.data[ids], _parents=(table,), _backward=bwd)


# ---------------------------------------------------------------------------
# Linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul {a.data.shape} @ {b.data.shape}")
    if (a.data.ndim == 1 and b.data.ndim > 2) or (b.data.ndim == 1 and a.data.ndim > 2):
        raise ShapeMismatch(f"1-d operand with batched matmul: {a.data.shape} @ {b.data.shape}")

    # batched-times-matrix runs as one flat GEMM, forward and backward
    if a.data.ndim > 2 and b.data.ndim == 2:
        lead = a.data.shape[:-1]
        a2 = a.data.reshape(-1, a.data.shape[-1])
        out_data = (a2 @ b.data).reshape(*lead, b.data.shape[-1])

        def bwd(g):
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                a._accumulate((g2 @ b.data.T).reshape(a.data.shape))
            if b.requires_grad:
                b._accumulate(a2.T @ g2)

        return Tensor(out_data, _parents=(a, b), _backward=bwd)

    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2) if b.data.ndim > 1 else np.outer(g, b.data)
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            if a.data.ndim > 1:
                gb = np.swapaxes(a.data, -1, -2) @ g
            else:
                gb = np.outer(a.data, g)
            b._accumulate(_unbroadcast(gb, b.data.shape))

    return Tensor(out_data, _parents=(a, b), _backward=bwd)


# ---------------------------------------------------------------------------
# Reductions

def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    def bwd(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

    return Tensor(a.data.sum(axis=axis, keepdims=keepdims), _parents=(a,), _backward=bwd)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]

    def bwd(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g / count, a.data.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(gg / count, a.data.shape).copy())

    return Tensor(a.data.mean(axis=axis, keepdims=keepdims), _parents=(a,), _backward=bwd)


# ---------------------------------------------------------------------------
# Normalization / attention building blocks

def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b for (..., in) inputs and an (in, out) weight."""
    if x.data.shape[-1] != w.data.shape[0]:
        raise ShapeMismatch(f"linear {x.data.shape} @ {w.data.shape}")
    lead = x.data.shape[:-1]
    x2 = x.data.reshape(-1, x.data.shape[-1])
    out = x2 @ w.data
    if b is not None:
        out += b.data
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        g2 = g.reshape(-1, g.shape[-1])
        if x.requires_grad:
            x._accumulate((g2 @ w.data.T).reshape(x.data.shape))
        if w.requires_grad:
            w._accumulate(x2.T @ g2)
        if b is not None and b.requires_grad:
            b._accumulate(g2.sum(axis=0))

    return Tensor(out.reshape(*lead, w.data.shape[-1]), _parents=parents, _backward=bwd)


def layer_norm(a: Tensor, gain: Tensor | None = None, bias: Tensor | None = None,
               eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean/unit variance, with an optional
    learned elementwise affine part."""
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv
    out = y
    if gain is not None:
        out = out * gain.data
    if bias is not None:
        out = out + bias.data
    parents = tuple(p for p in (a, gain, bias) if p is not None)

    def bwd(g):
        if gain is not None and gain.requires_grad:
            gain._accumulate((g * y).reshape(-1, y.shape[-1]).sum(axis=0))
        if bias is not None and bias.requires_grad:
            bias._accumulate(g.reshape(-1, y.shape[-1]).sum(axis=0))
        if a.requires_grad:
            gh = g * gain.data if gain is not None else g
            g_mean = gh.mean(axis=-1, keepdims=True)
            gy_mean = (gh * y).mean(axis=-1, keepdims=True)
            a._accumulate(inv * (gh - g_mean - y * gy_mean))

    return Tensor(out, _parents=parents, _backward=bwd)


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis.  ``mask`` (broadcastable, True = keep)
    excludes positions exactly: their probability is 0.0 and no gradient
    flows through them."""
    x = a.data
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    x_max = x.max(axis=-1, keepdims=True)
    x_max = np.where(np.isfinite(x_max), x_max, 0.0)  # fully-masked rows
    e = np.exp(x - x_max)
    denom = e.sum(axis=-1, keepdims=True)
    y = e / np.where(denom == 0.0, 1.0, denom)

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        a._accumulate((g - dot) * y)

    return Tensor(y, _parents=(a,), _backward=bwd)


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Per-position negative log-likelihood, shape = logits.shape[:-1].

    ``targets`` are integer class ids.  Combine with a mask and sum/mean to
    build sequence losses.
    """
    targets = np.asarray(targets)
    if targets.shape != logits.data.shape[:-1]:
        raise ShapeMismatch(
            f"targets {targets.shape} vs logits {logits.data.shape[:-1]}"
        )
    x = logits.data
    x_max = x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(x - x_max).sum(axis=-1, keepdims=True)) + x_max
    picked = np.take_along_axis(x, targets[..., None], axis=-1)
    nll = (lse - picked)[..., 0]

    def bwd(g):
        p = np.exp(x - lse)
        np.subtract.at(p, (*np.indices(targets.shape), targets), 1.0)
        p *= g[..., None]
        logits._accumulate(p)

    return Tensor(nll, _parents=(logits,), _backward=bwd)


def reparameterize(mu: Tensor, sigma: Tensor, eps: np.ndarray) -> Tensor:
    """z = mu + sigma * eps with gradients to both mu and sigma; eps is a
    pre-drawn standard-normal array so forward passes are deterministic."""
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != mu.data.shape or mu.data.shape != sigma.data.shape:
        raise ShapeMismatch(
            f"reparameterize shapes mu={mu.data.shape} sigma={sigma.data.shape} eps={eps.shape}"
        )

    def bwd(g):
        if mu.requires_grad:
            mu._accumulate(g)
        if sigma.requires_grad:
            sigma._accumulate(g * eps)

    return Tensor(mu.data + sigma.data * eps, _parents=(mu, sigma), _backward=bwd)

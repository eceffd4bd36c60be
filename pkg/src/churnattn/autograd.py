"""Minimal reverse-mode autodiff on dense float64 numpy arrays.

Every operation eagerly computes its value and, when gradients are needed,
records a backward closure on the output node. ``backward()`` walks the graph
in reverse topological order and accumulates ``d(loss)/d(tensor)`` into the
``grad`` buffer of every tensor with ``requires_grad=True``. Evaluation order
is fixed by construction order, so identical inputs give bit-identical
results.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .exceptions import GraphError, NumericError, ShapeMismatchError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A dense float64 array that can participate in a gradient graph.

    Attributes:
        data: the value, row-major float64 ndarray.
        grad: accumulated gradient of the same shape, or None.
        requires_grad: True for trainable leaves and anything downstream.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray, owned: bool = False) -> None:
        # owned=True promises g is freshly allocated by the caller and not
        # aliased anywhere else, so it can become the grad buffer directly.
        if self.grad is None:
            self.grad = g if owned else np.array(g, dtype=np.float64)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate grads of every trainable ancestor of this scalar node.

        A node's grad buffer is exclusively its own: it is handed to the
        node's backward closure exactly once, after every contribution has
        been accumulated, and closures are allowed to consume (mutate or
        re-own) it.
        """
        if self.data.size != 1:
            raise GraphError(
                f"backward() requires a scalar node, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward_fn = backward_fn
    else:
        out._parents = ()
        out._backward_fn = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient over axes that were broadcast to reach g's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- arithmetic ---------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def backward_fn(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.data.shape)
            a._accumulate(ga, owned=ga is not g)
        if b.requires_grad:
            gb = _unbroadcast(g, b.data.shape)
            # even when gb is g itself this is safe to hand over:
            # a's branch above copied g if it needed to keep it
            b._accumulate(gb, owned=True)

    return _make(data, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data - b.data

    def backward_fn(g):
        if a.requires_grad:
            ga = _unbroadcast(g, a.data.shape)
            a._accumulate(ga, owned=ga is not g)
        if b.requires_grad:
            b._accumulate(-_unbroadcast(g, b.data.shape), owned=True)

    return _make(data, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape), owned=True)
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape), owned=True)

    return _make(data, (a, b), backward_fn)


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    data = a.data * c

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * c, owned=True)

    return _make(data, (a,), backward_fn)


def matmul(a, b) -> Tensor:
    """Matrix product, with 3D inputs treated as stacked matrices.

    Supports 2D @ 2D, 3D @ 2D (shared right-hand matrix) and 3D @ 3D with
    matching batch dimension. The 3D @ 2D case is evaluated as one flattened
    2D product, which is much faster than a strided batched call.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeMismatchError(
            f"matmul inner dimensions disagree: {a.data.shape} @ {b.data.shape}"
        )
    if a.data.ndim >= 3 and b.data.ndim == 2:
        lead = a.data.shape[:-1]
        k = a.data.shape[-1]
        a2 = np.ascontiguousarray(a.data).reshape(-1, k)
        data = (a2 @ b.data).reshape(*lead, b.data.shape[1])

        def backward_fn(g):
            g2 = np.ascontiguousarray(g).reshape(-1, b.data.shape[1])
            if a.requires_grad:
                a._accumulate((g2 @ b.data.T).reshape(a.data.shape), owned=True)
            if b.requires_grad:
                b._accumulate(a2.T @ g2, owned=True)

        return _make(data, (a, b), backward_fn)

    data = np.matmul(a.data, b.data)

    def backward_fn(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(ga, a.data.shape), owned=True)
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(gb, b.data.shape), owned=True)

    return _make(data, (a, b), backward_fn)


def transpose_last2(a) -> Tensor:
    a = _as_tensor(a)
    data = np.swapaxes(a.data, -1, -2)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(np.swapaxes(g, -1, -2), owned=True)

    return _make(data, (a,), backward_fn)


def transpose_axes(a, axes: tuple[int, ...]) -> Tensor:
    a = _as_tensor(a)
    data = np.transpose(a.data, axes)
    inverse = tuple(np.argsort(axes))

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(np.transpose(g, inverse), owned=True)

    return _make(data, (a,), backward_fn)


def affine(x, w: Tensor, b: Tensor, relu_out: bool = False) -> Tensor:
    """Fused x @ w + b over the last axis of x, with w (k, n) and b (n,).

    With relu_out=True the rectifier is applied in place on the output and
    its mask folded into the backward pass.
    """
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.shape[-1] != w.data.shape[0]:
        raise ShapeMismatchError(
            f"affine inner dimensions disagree: {x.data.shape} @ {w.data.shape}"
        )
    lead = x.data.shape[:-1]
    n = w.data.shape[1]
    x2 = np.ascontiguousarray(x.data).reshape(-1, x.data.shape[-1])
    out2 = x2 @ w.data
    out2 += b.data
    if relu_out:
        np.maximum(out2, 0.0, out=out2)
    data = out2.reshape(*lead, n)

    def backward_fn(g):
        g2 = np.ascontiguousarray(g).reshape(-1, n)
        if relu_out:
            g2 *= out2 > 0.0  # in place: the grad buffer is ours to consume
        if x.requires_grad:
            x._accumulate((g2 @ w.data.T).reshape(x.data.shape), owned=True)
        if w.requires_grad:
            w._accumulate(x2.T @ g2, owned=True)
        if b.requires_grad:
            b._accumulate(g2.sum(axis=0), owned=True)

    return _make(data, (x, w, b), backward_fn)


def scaled_attention(qkv: Tensor, scale: float) -> Tensor:
    """Fused softmax((scale * Q) @ K^T) @ V for all heads at once.

    ``qkv`` packs the three projections as (rows, tokens, 3, heads, d_k);
    the result (rows, tokens, heads, d_k) matches composing
    matmul / softmax_rows / matmul head by head, but runs as tiled kernel
    passes (see _attention_kernels).
    """
    from ._attention_kernels import attention_backward, attention_finish, attention_scores

    qkv = _as_tensor(qkv)
    if qkv.data.ndim != 5 or qkv.data.shape[2] != 3:
        raise ShapeMismatchError(
            f"scaled_attention needs (rows, T, 3, heads, d_k), got {qkv.data.shape}"
        )
    x = np.ascontiguousarray(qkv.data)
    B, T, _, H, D = x.shape
    attn = np.empty((B, H, T, T))
    out = np.empty((B, T, H, D))
    attention_scores(x, scale, attn)
    np.exp(attn, out=attn)
    attention_finish(x, attn, out)

    def backward_fn(g):
        if qkv.requires_grad:
            gx = np.empty_like(x)
            attention_backward(np.ascontiguousarray(g), x, scale, attn, gx)
            qkv._accumulate(gx, owned=True)

    return _make(out, (qkv,), backward_fn)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    data = a.data.reshape(shape)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape), owned=True)

    return _make(data, (a,), backward_fn)


def concat(tensors, axis: int) -> Tensor:
    tensors = tuple(_as_tensor(t) for t in tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)], owned=True)

    return _make(data, tensors, backward_fn)


def embedding_lookup(table: Tensor, indices: np.ndarray) -> Tensor:
    """Rows of ``table`` selected by integer ``indices`` (gather)."""
    indices = np.asarray(indices)
    if indices.size and (indices.min() < 0 or indices.max() >= table.data.shape[0]):
        raise ShapeMismatchError(
            f"embedding index out of bounds for table with {table.data.shape[0]} rows"
        )
    data = table.data[indices]

    def backward_fn(g):
        if table.requires_grad:
            rows = table.data.shape[0]
            if rows <= 32:
                # masked sums beat np.add.at for the small level counts here
                gt = np.empty_like(table.data)
                for v in range(rows):
                    gt[v] = g[indices == v].sum(axis=0)
            else:
                gt = np.zeros_like(table.data)
                np.add.at(gt, indices, g)
            table._accumulate(gt, owned=True)

    return _make(data, (table,), backward_fn)


def scalar_tokens(x: np.ndarray, w: Tensor, b: Tensor) -> Tensor:
    """Per-feature affine tokens: out[i, f, :] = x[i, f] * w[f, :] + b[f, :].

    x is a constant (rows, features) array; w and b are (features, width).
    """
    w, b = _as_tensor(w), _as_tensor(b)
    x3 = np.asarray(x, dtype=np.float64)[:, :, None]
    out = x3 * w.data
    out += b.data

    def backward_fn(g):
        if w.requires_grad:
            w._accumulate((g * x3).sum(axis=0), owned=True)
        if b.requires_grad:
            b._accumulate(g.sum(axis=0), owned=True)

    return _make(out, (w, b), backward_fn)


# -- nonlinearities -----------------------------------------------------

def relu(a) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0.0)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0.0), owned=True)

    return _make(data, (a,), backward_fn)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    data = _stable_sigmoid(a.data)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g * data * (1.0 - data), owned=True)

    return _make(data, (a,), backward_fn)


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax_rows(a) -> Tensor:
    """Softmax over the last axis, stabilised by row-max subtraction."""
    a = _as_tensor(a)
    if np.isnan(a.data).any():
        raise NumericError("softmax_rows received NaN input")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        if a.requires_grad:
            dot = (g * data).sum(axis=-1, keepdims=True)
            a._accumulate(data * (g - dot), owned=True)

    return _make(data, (a,), backward_fn)


# -- reductions and losses ----------------------------------------------

def tensor_sum(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    data = np.asarray(a.data.sum(axis=axis))

    def backward_fn(g):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape).copy(), owned=True)
            else:
                a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy(), owned=True)

    return _make(data, (a,), backward_fn)


def bce_with_logits_sum(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Sum over rows of binary cross-entropy, computed from logits.

    Evaluates sum(softplus(z) - y*z), which equals the cross-entropy of
    sigmoid(z) against y without ever forming log(0).
    """
    logits = _as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.data.shape:
        raise ShapeMismatchError(
            f"targets shape {y.shape} != logits shape {logits.data.shape}"
        )
    z = logits.data
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    data = np.asarray((softplus - y * z).sum())

    def backward_fn(g):
        if logits.requires_grad:
            logits._accumulate(g * (_stable_sigmoid(z) - y), owned=True)

    return _make(data, (logits,), backward_fn)

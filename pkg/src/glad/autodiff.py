"""Dense float64 matrix kernel with reverse-mode differentiation.

Every value is a 2-D ``float64`` array wrapped in :class:`Tensor`. Operations
record their parents and a backward closure only when at least one input
requires a gradient, so inference runs without building a tape.

Conventions at non-differentiable points: ``relu'(0) = 0``, ``hinge'(0) = 0``
and column max-pooling routes the gradient to the lowest row index on ties.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "as_tensor",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "transpose",
    "concat_cols",
    "concat_rows",
    "take_rows",
    "relu",
    "sigmoid",
    "hinge",
    "softmax_rows",
    "grouped_attention",
    "maxpool_cols",
    "segment_maxpool",
    "propagate",
    "total",
    "mean",
    "l2_norm_sq",
    "backward",
    "grad",
    "grad_check",
]


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeError(f"expected a matrix, got {arr.ndim} dimensions")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, inputs, backward_fn):
    # only record the op if something upstream needs a gradient
    if any(t.requires_grad for t in inputs):
        return Tensor(data, True, tuple(inputs), backward_fn)
    return Tensor(data)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    (ra, ca), (rb, cb) = a.shape, b.shape
    if (ra != rb and 1 not in (ra, rb)) or (ca != cb and 1 not in (ca, cb)):
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        return (g @ b.data.T if a.requires_grad else None,
                a.data.T @ g if b.requires_grad else None)

    return _make(out, (a, b), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    """Elementwise product with row/column broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)

    return _make(a.data * b.data, (a, b), backward)


def scale(a, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)
    return _make(a.data * s, (a,), lambda g: (g * s,))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.T.copy(), (a,), lambda g: (g.T,))


def concat_cols(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: row counts {a.shape[0]} != {b.shape[0]}")
    k = a.shape[1]
    return _make(np.hstack([a.data, b.data]), (a, b), lambda g: (g[:, :k], g[:, k:]))


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if len({p.shape[1] for p in parts}) > 1:
        raise ShapeError("concat_rows: column counts differ")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _make(np.vstack([p.data for p in parts]), parts, backward)


def take_rows(a, index) -> Tensor:
    """Gather rows by integer index (repeats allowed)."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise IndexError(f"row index out of range for {a.shape[0]} rows")
    n = a.shape[0]

    def backward(g):
        out = np.zeros((n, g.shape[1]))
        if index.size == 0:
            return (out,)
        # sort once and sum runs; much faster than np.add.at on wide rows
        order = np.argsort(index, kind="stable")
        idx = index[order]
        starts = np.flatnonzero(np.r_[True, idx[1:] != idx[:-1]])
        out[idx[starts]] = np.add.reduceat(g[order], starts, axis=0)
        return (out,)

    return _make(a.data[index], (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def hinge(a) -> Tensor:
    """Elementwise ``max(0, x)``; same kernel as relu, named for losses."""
    return relu(a)


def softmax_rows(a, mask=None) -> Tensor:
    """Row softmax. ``mask`` (bool, same shape) marks allowed entries; every
    row must allow at least one entry."""
    a = as_tensor(a)
    x = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"softmax_rows: mask {mask.shape} vs input {x.shape}")
        if not mask.any(axis=1).all():
            raise ValueError("softmax_rows: a row has no allowed entries")
        x = np.where(mask, x, -np.inf)
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _make(s, (a,), backward)


def grouped_attention(q, k, v, plan) -> Tensor:
    """Scaled dot-product attention evaluated independently per group.

    ``plan`` is a list of ``(qi, ki, mask)``: row indices into ``q``, row
    indices into ``k``/``v`` and a boolean ``len(qi) x len(ki)`` mask. The
    output stacks each group's ``len(qi)`` rows in plan order. Indices must
    be unique within a group.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[1] != k.shape[1] or k.shape[0] != v.shape[0]:
        raise ShapeError(f"grouped_attention: q {q.shape}, k {k.shape}, v {v.shape}")
    c = 1.0 / np.sqrt(q.shape[1])
    Q, K, V = q.data, k.data, v.data
    probs, outs = [], []
    for qi, ki, mask in plan:
        x = np.where(mask, (Q[qi] @ K[ki].T) * c, -np.inf)
        e = np.exp(x - x.max(axis=1, keepdims=True))
        s = e / e.sum(axis=1, keepdims=True)
        probs.append(s)
        outs.append(s @ V[ki])
    out = np.vstack(outs) if outs else np.zeros((0, V.shape[1]))

    def backward(g):
        dQ, dK, dV = np.zeros_like(Q), np.zeros_like(K), np.zeros_like(V)
        row = 0
        for (qi, ki, _), s in zip(plan, probs):
            gs = g[row:row + len(qi)]
            row += len(qi)
            dV[ki] += s.T @ gs
            ds = gs @ V[ki].T
            ds = s * (ds - (ds * s).sum(axis=1, keepdims=True)) * c
            dQ[qi] += ds @ K[ki]
            dK[ki] += ds.T @ Q[qi]
        return dQ, dK, dV

    return _make(out, (q, k, v), backward)


def maxpool_cols(a) -> Tensor:
    """Column-wise max over rows, returned as a 1 x cols row vector."""
    a = as_tensor(a)
    if a.shape[0] == 0:
        raise ShapeError("maxpool_cols: no rows")
    arg = a.data.argmax(axis=0)  # first occurrence on ties
    cols = np.arange(a.shape[1])

    def backward(g):
        out = np.zeros(a.shape)
        out[arg, cols] = g[0]
        return (out,)

    return _make(a.data[arg, cols][None, :], (a,), backward)


def segment_maxpool(a, offsets) -> Tensor:
    """Column max within consecutive row segments ``offsets[i]:offsets[i+1]``.

    Returns one row per segment. Segments must be nonempty.
    """
    a = as_tensor(a)
    offsets = np.asarray(offsets, dtype=np.intp)
    if np.any(np.diff(offsets) <= 0):
        raise ShapeError("segment_maxpool: empty segment")
    args = np.empty((len(offsets) - 1, a.shape[1]), dtype=np.intp)
    for s in range(len(offsets) - 1):
        args[s] = offsets[s] + a.data[offsets[s]:offsets[s + 1]].argmax(axis=0)
    cols = np.arange(a.shape[1])
    out = a.data[args, cols]

    def backward(g):
        res = np.zeros(a.shape)
        for s in range(g.shape[0]):
            res[args[s], cols] += g[s]
        return (res,)

    return _make(out, (a,), backward)


def propagate(blocks, h) -> Tensor:
    """Left-multiply ``h`` by a block-diagonal matrix given as ``(offset, M)``
    pairs of dense square blocks. Rows outside every block map to zero."""
    h = as_tensor(h)
    blocks = list(blocks)
    for off, m in blocks:
        if off + m.shape[0] > h.shape[0] or m.shape[0] != m.shape[1]:
            raise ShapeError("propagate: block does not fit the input")
    out = np.zeros_like(h.data)
    for off, m in blocks:
        n = m.shape[0]
        out[off:off + n] = m @ h.data[off:off + n]

    def backward(g):
        res = np.zeros_like(g)
        for off, m in blocks:
            n = m.shape[0]
            res[off:off + n] = m.T @ g[off:off + n]
        return (res,)

    return _make(out, (h,), backward)


def total(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _make(a.data.sum(), (a,), lambda g: (np.full(shape, g[0, 0]),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size
    if n == 0:
        raise ShapeError("mean of an empty tensor")
    return scale(total(a), 1.0 / n)


def l2_norm_sq(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    return _make(np.sum(x * x), (a,), lambda g: (2.0 * g[0, 0] * x,))


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(x) into ``x.grad`` for every tensor on the tape."""
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar loss, got {loss.shape}")
    if not loss.requires_grad:
        return
    order = _toposort(loss)
    grads = {id(loss): np.ones((1, 1))}
    owned = set()  # buffers we allocated and may update in place
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key not in grads:
                grads[key] = pg
            elif key in owned:
                grads[key] += pg
            else:
                grads[key] = grads[key] + pg
                owned.add(key)


LossFn = Callable[[list], Tensor]


def grad(loss: LossFn, params: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Gradients of ``loss(tensors)`` with respect to each array in ``params``."""
    leaves = [Tensor(np.array(p, dtype=np.float64), requires_grad=True) for p in params]
    out = loss(leaves)
    backward(out)
    return [np.zeros(t.shape) if t.grad is None else t.grad for t in leaves]


def grad_check(loss: LossFn, params: Sequence[np.ndarray], eps: float = 1e-5) -> float:
    """Maximum relative error between reverse-mode and central-difference
    gradients over every coordinate of every parameter.

    Relative error is ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    base = [np.array(p, dtype=np.float64) for p in params]
    analytic = grad(loss, base)

    def f(arrays):
        return loss([Tensor(x) for x in arrays]).item()

    worst = 0.0
    for k, p in enumerate(base):
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f(base)
            flat[i] = orig - eps
            down = f(base)
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = analytic[k].reshape(-1)[i]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst

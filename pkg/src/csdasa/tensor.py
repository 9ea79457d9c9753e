"""Dense float64 tensors with a reverse-mode tape.

Every op returns a new :class:`Tensor` holding its parents and a closure that
maps the upstream gradient to one gradient per parent. Broadcasting is limited
to identical shapes or a scalar operand.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A function was called outside its contract."""


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple["Tensor", ...] = (), _backward: BackwardFn | None = None):
        arr = np.array(data, dtype=np.float64)
        if not _parents and not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values in tensor {name or ''}".rstrip())
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, _parents=parents if needs else (),
                  _backward=backward if needs else None)


# ---------------------------------------------------------------- tape


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Accumulate d(loss)/d(node) for every node reachable from ``loss``.

    Returns a map from ``id(tensor)`` to its gradient array.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None or node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return grads


def grad(loss: Tensor, params: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar loss w.r.t. ``params``; frozen tensors get zeros."""
    params = list(params)
    table = backward(loss)
    out = []
    for p in params:
        g = table.get(id(p)) if p.requires_grad else None
        out.append(np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64))
    return out


# ---------------------------------------------------------------- elementwise


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum()).reshape(t.shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(g, b)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(-g, b)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b),
                 lambda g: (_reduce_to(g * bd, a), _reduce_to(g * ad, b)))


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    out = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                   np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    return _node(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return _node(out, (x,), lambda g: (g * (1.0 - out * out),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _node(x.data * mask, (x,), lambda g: (g * mask,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _node(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    xd = x.data
    return _node(np.log(xd), (x,), lambda g: (g / xd,))


ELEMENTWISE = {"sigmoid": sigmoid, "tanh": tanh, "add": add, "mul": mul,
               "relu": relu, "exp": exp, "sub": sub}


def elementwise(op: str, *args) -> Tensor:
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# ---------------------------------------------------------------- reductions & layout


def sum(x: Tensor) -> Tensor:  # noqa: A001
    shape = x.shape
    return _node(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor, exact: bool = False) -> Tensor:
    """Mean of all entries; ``exact`` uses a correctly rounded (order-free) sum."""
    shape, n = x.shape, x.size
    value = math.fsum(x.data.ravel()) / n if exact else x.data.mean()
    return _node(np.asarray(value), (x,),
                 lambda g: (np.broadcast_to(g / n, shape).copy(),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    src = x.shape
    out = x.data.reshape(tuple(shape))
    return _node(out, (x,), lambda g: (g.reshape(src),))


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    if x.ndim < 2:
        raise DimensionError("transpose needs at least 2 dims")
    return _node(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def getitem(x: Tensor, index) -> Tensor:
    shape = x.shape

    def _back(g):
        full = np.zeros(shape)
        full[index] = g
        return (full,)

    return _node(x.data[index], (x,), _back)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = list(tensors[0].shape)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(ref, other))
                                         if i != axis % len(ref)):
            raise DimensionError(f"concat: {tensors[0].shape} vs {t.shape} on axis {axis}")
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shape = tensors[0].shape
    if any(t.shape != shape for t in tensors):
        raise DimensionError("stack: all tensors must share a shape")
    n = len(tensors)
    return _node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors),
                 lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)))


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched product over identical leading dims: (..., m, k) @ (..., k, n)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch dims of {a.shape} and {b.shape} differ")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner extents {a.shape[-1]} and {b.shape[-2]} differ")
    ad, bd = a.data, b.data
    return _node(ad @ bd, (a, b),
                 lambda g: (g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g))


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map ``x @ w.T + b`` for x (n, in), w (out, in), b (out,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1] or b.shape != (w.shape[0],):
        raise DimensionError(f"linear: x {x.shape}, w {w.shape}, b {b.shape}")
    xd, wd = x.data, w.data
    return _node(xd @ wd.T + b.data, (x, w, b),
                 lambda g: (g @ wd, g.T @ xd, g.sum(0)))


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-subtracted."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def _back(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _node(out, (x,), _back)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Same-padded 2-D cross-correlation.

    x: (n, c_in, H, W); w: (c_out, c_in, k, k) with k odd; b: (c_out,).
    """
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-D input and kernels, got {x.shape}, {w.shape}")
    n, cin, H, W = x.shape
    cout, wcin, k, k2 = w.shape
    if wcin != cin:
        raise DimensionError(f"conv2d: input has {cin} channels, kernels expect {wcin}")
    if k != k2 or k % 2 == 0:
        raise DimensionError(f"conv2d: kernels must be square with odd size, got {k}x{k2}")
    if b is not None and b.shape != (cout,):
        raise DimensionError(f"conv2d: bias shape {b.shape}, expected ({cout},)")
    cols = kernels.im2col(np.ascontiguousarray(x.data), k)
    wmat = w.data.reshape(cout, cin * k * k)
    out = np.matmul(wmat, cols)
    if b is not None:
        out += b.data[:, None]
    out = out.reshape(n, cout, H, W)

    def _back(g):
        g2 = g.reshape(n, cout, H * W)
        gw = np.tensordot(g2, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        gx = kernels.col2im(np.ascontiguousarray(np.matmul(wmat.T, g2)), cin, H, W, k)
        gb = g2.sum(axis=(0, 2)) if b is not None else None
        return (gx, gw, gb)

    parents = (x, w, b) if b is not None else (x, w)
    return _node(out, parents, _back)


def lstm_cell(pre: Tensor, c_prev: Tensor, peep: Tensor) -> Tensor:
    """Fused ConvLSTM gate update.

    pre: (n, 4H, w, h) gate pre-activations ordered [i, f, o, g];
    c_prev: (n, H, w, h); peep: (3, H, w, h) Hadamard weights for i, f, o.
    Returns (2, n, H, w, h) stacking the new hidden and cell states.
    """
    n, hid = c_prev.shape[:2]
    if pre.shape != (n, 4 * hid) + c_prev.shape[2:] or peep.shape != (3,) + c_prev.shape[1:]:
        raise DimensionError(f"lstm_cell: pre {pre.shape}, c {c_prev.shape}, peep {peep.shape}")
    cp = np.ascontiguousarray(c_prev.data)
    pe = np.ascontiguousarray(peep.data)
    gates, c, h = kernels.lstm_gates_forward(np.ascontiguousarray(pre.data), cp, pe)

    def _back(g):
        dpre, dcp, dpeep = kernels.lstm_gates_backward(
            gates, cp, c, pe, np.ascontiguousarray(g[0]), np.ascontiguousarray(g[1]))
        return (dpre, dcp, dpeep)

    return _node(np.stack([h, c]), (pre, c_prev, peep), _back)


def pairwise_sqdist(x: Tensor, y: Tensor) -> Tensor:
    """Squared Euclidean distances between rows: (n, d), (m, d) -> (n, m)."""
    if x.ndim != 2 or y.ndim != 2 or x.shape[1] != y.shape[1]:
        raise DimensionError(f"pairwise_sqdist: {x.shape} vs {y.shape}")
    xd, yd = np.ascontiguousarray(x.data), np.ascontiguousarray(y.data)
    out = kernels.pairwise_sqdist(xd, yd)

    def _back(g):
        gx = 2.0 * (g.sum(1)[:, None] * xd - g @ yd)
        gy = 2.0 * (g.sum(0)[:, None] * yd - g.T @ xd)
        return (gx, gy)

    return _node(out, (x, y), _back)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax probability of the true class."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"cross_entropy: logits {logits.shape}, labels {labels.shape}")
    n, k = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = np.mean(lse - z[rows, labels])

    def _back(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return (g * p / n,)

    return _node(np.asarray(loss), (logits,), _back)


# ---------------------------------------------------------------- verification


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-6) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` is re-evaluated with each parameter entry nudged in place, so it must
    read the parameters through the tensors passed here. Frozen parameters are
    expected to carry exactly zero analytic gradient.
    """
    out = f()
    if out.size != 1:
        raise ContractError(f"grad_check needs a scalar function, got shape {out.shape}")
    analytic = grad(out, params)
    worst = 0.0
    for p, ga in zip(params, analytic):
        base = p.data.copy()
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            p.data = _frozen(base)
            up = f().item()
            flat[i] = orig - h
            p.data = _frozen(base)
            down = f().item()
            flat[i] = orig
            numeric = (up - down) / (2 * h) if p.requires_grad else 0.0
            a = ga.reshape(-1)[i]
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
        p.data = _frozen(base)
    return worst


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = arr.copy()
    out.flags.writeable = False
    return out

"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array and records enough of the computation graph
to run one backward pass. The op set is deliberately small: exactly what the
recurrent/dense networks and their losses need. Every function here accepts
either Tensors or plain ndarrays; ndarray inputs are treated as constants and
ndarray-only expressions return ndarrays, so the same layer code serves both
the taped training path and the fast inference path.

Gradient checks against central finite differences live in the test suite.
"""

from __future__ import annotations

import numpy as np


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcasted gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class Tensor:
    """Numpy-backed array node; ``requires_grad`` marks it for the tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    # keep numpy from broadcasting over us; defer to our reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, parents=(), backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> np.ndarray:
        return self.data

    def _accum(self, g: np.ndarray):
        self.grad = g if self.grad is None else self.grad + g

    def backward(self):
        """Populate ``grad`` on every reachable node; single use per graph."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss tensor")
        if self._backward is None and not self._parents:
            raise RuntimeError("backward() on a graph that was already consumed (or a leaf)")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
            # consume the graph: a second backward() raises instead of double-counting
            node._backward = None
            node._parents = ()

    # operators ----------------------------------------------------------
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, n):
        return pow_const(self, n)

    def __getitem__(self, idx):
        return getitem(self, idx)


class Parameter(Tensor):
    """Trainable leaf tensor."""

    __slots__ = ()

    def __init__(self, data):
        super().__init__(np.asarray(data), requires_grad=True)


def _op(data, *pairs):
    """Build a result node from (operand, grad_fn) pairs; constants fold away."""
    parents = tuple(t for t, _ in pairs if isinstance(t, Tensor) and t.requires_grad)
    if not parents:
        return Tensor(data)

    def backward(g):
        for t, fn in pairs:
            if isinstance(t, Tensor) and t.requires_grad:
                t._accum(fn(g))

    return Tensor(data, requires_grad=True, parents=parents, backward=backward)


def _any_tensor(*xs) -> bool:
    return any(isinstance(x, Tensor) for x in xs)


# binary ------------------------------------------------------------------


def add(a, b):
    if not _any_tensor(a, b):
        return np.add(a, b)
    ad, bd = _data(a), _data(b)
    return _op(
        ad + bd,
        (a, lambda g: _unbroadcast(g, ad.shape)),
        (b, lambda g: _unbroadcast(g, bd.shape)),
    )


def sub(a, b):
    if not _any_tensor(a, b):
        return np.subtract(a, b)
    ad, bd = _data(a), _data(b)
    return _op(
        ad - bd,
        (a, lambda g: _unbroadcast(g, ad.shape)),
        (b, lambda g: _unbroadcast(-g, bd.shape)),
    )


def mul(a, b):
    if not _any_tensor(a, b):
        return np.multiply(a, b)
    ad, bd = _data(a), _data(b)
    return _op(
        ad * bd,
        (a, lambda g: _unbroadcast(g * bd, ad.shape)),
        (b, lambda g: _unbroadcast(g * ad, bd.shape)),
    )


def div(a, b):
    if not _any_tensor(a, b):
        return np.divide(a, b)
    ad, bd = _data(a), _data(b)
    return _op(
        ad / bd,
        (a, lambda g: _unbroadcast(g / bd, ad.shape)),
        (b, lambda g: _unbroadcast(-g * ad / (bd * bd), bd.shape)),
    )


def matmul(a, b):
    if not _any_tensor(a, b):
        return np.matmul(a, b)
    ad, bd = _data(a), _data(b)
    return _op(
        ad @ bd,
        (a, lambda g: g @ bd.T),
        (b, lambda g: ad.T @ g),
    )


def atan2(y, x):
    if not _any_tensor(y, x):
        return np.arctan2(y, x)
    yd, xd = _data(y), _data(x)
    denom = xd * xd + yd * yd
    return _op(
        np.arctan2(yd, xd),
        (y, lambda g: _unbroadcast(g * xd / denom, yd.shape)),
        (x, lambda g: _unbroadcast(-g * yd / denom, xd.shape)),
    )


def maximum(a, const):
    """Elementwise max against a constant (subgradient: constant side gets 0)."""
    if not isinstance(a, Tensor):
        return np.maximum(a, const)
    ad = a.data
    mask = ad > const
    return _op(np.maximum(ad, const), (a, lambda g: g * mask))


def where(cond, a, b):
    """Select per element from a/b by a constant boolean mask."""
    cond = np.asarray(cond)
    if not _any_tensor(a, b):
        return np.where(cond, a, b)
    ad, bd = _data(a), _data(b)
    return _op(
        np.where(cond, ad, bd),
        (a, lambda g: _unbroadcast(np.where(cond, g, 0.0), ad.shape)),
        (b, lambda g: _unbroadcast(np.where(cond, 0.0, g), bd.shape)),
    )


# unary -------------------------------------------------------------------


def exp(x):
    if not isinstance(x, Tensor):
        return np.exp(x)
    out = np.exp(x.data)
    return _op(out, (x, lambda g: g * out))


def log(x):
    if not isinstance(x, Tensor):
        return np.log(x)
    return _op(np.log(x.data), (x, lambda g: g / x.data))


def sqrt(x):
    if not isinstance(x, Tensor):
        return np.sqrt(x)
    out = np.sqrt(x.data)
    return _op(out, (x, lambda g: g * 0.5 / out))


def tanh(x):
    if not isinstance(x, Tensor):
        return np.tanh(x)
    out = np.tanh(x.data)
    return _op(out, (x, lambda g: g * (1.0 - out * out)))


def sigmoid(x):
    if not isinstance(x, Tensor):
        return 1.0 / (1.0 + np.exp(-x))
    out = 1.0 / (1.0 + np.exp(-x.data))
    return _op(out, (x, lambda g: g * out * (1.0 - out)))


def pow_const(x, n):
    if not isinstance(x, Tensor):
        return np.power(x, n)
    xd = x.data
    return _op(np.power(xd, n), (x, lambda g: g * n * np.power(xd, n - 1)))


# shape / reduction ---------------------------------------------------------


def tsum(x, axis=None, keepdims=False):
    if not isinstance(x, Tensor):
        return np.sum(x, axis=axis, keepdims=keepdims)
    xd = x.data

    def backward(g):
        if axis is None:
            return np.broadcast_to(g, xd.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, xd.shape).copy()

    return _op(np.sum(xd, axis=axis, keepdims=keepdims), (x, backward))


def tmean(x, axis=None, keepdims=False):
    xd = _data(x)
    count = xd.size if axis is None else xd.shape[axis]
    return div(tsum(x, axis=axis, keepdims=keepdims), float(count))


def getitem(x, idx):
    if not isinstance(x, Tensor):
        return x[idx]
    xd = x.data

    def backward(g):
        z = np.zeros_like(xd)
        if isinstance(idx, np.ndarray) and idx.dtype != bool:
            np.add.at(z, idx, g)
        else:
            z[idx] = g
        return z

    return _op(xd[idx], (x, backward))


def concat(parts, axis=0):
    if not _any_tensor(*parts):
        return np.concatenate(parts, axis=axis)
    datas = [_data(p) for p in parts]
    offsets = [0]
    for d in datas:
        offsets.append(offsets[-1] + d.shape[axis])

    def grad_for(i):
        def backward(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(sl)]

        return backward

    pairs = [(p, grad_for(i)) for i, p in enumerate(parts)]
    return _op(np.concatenate(datas, axis=axis), *pairs)


def reshape(x, shape):
    if not isinstance(x, Tensor):
        return np.reshape(x, shape)
    orig = x.data.shape
    return _op(x.data.reshape(shape), (x, lambda g: g.reshape(orig)))


def blocked_cumsum(x, block):
    """Cumulative sum over leading blocks of ``block`` rows.

    For a (T*block, C) array laid out step-major (step 0 rows first), this is a
    per-column cumsum across steps, independently for each of the ``block``
    lanes. Backward is the reversed cumsum.
    """
    xd = _data(x)
    rows, cols = xd.shape
    steps = rows // block
    out = xd.reshape(steps, block, cols).cumsum(axis=0).reshape(rows, cols)
    if not isinstance(x, Tensor):
        return out

    def backward(g):
        gr = g.reshape(steps, block, cols)
        return gr[::-1].cumsum(axis=0)[::-1].reshape(rows, cols)

    return _op(out, (x, backward))

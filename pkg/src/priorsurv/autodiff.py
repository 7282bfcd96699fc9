"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A ``Tensor`` wraps an ndarray and, when gradients are enabled, records the
operations applied to it on an implicit tape (the graph of parent links).
Calling :meth:`Tensor.backward` on a scalar result accumulates gradients
into every reachable tensor created with ``requires_grad=True``.

Only the operations needed by this package are implemented.  Everything is
computed in float64 so analytic gradients can be validated against central
finite differences to tight tolerances.
"""

from __future__ import annotations

import numpy as np

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_links")

    # make numpy defer to the reflected operators instead of consuming
    # the tensor through __array__
    __array_ufunc__ = None
    __array_priority__ = 1000.0

    def __init__(self, value, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        # list of (parent, vjp) pairs; empty for leaves and constants
        self._links = ()

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def item(self):
        return float(self.value)

    def __array__(self, dtype=None):
        return np.asarray(self.value, dtype=dtype)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.value!r}{flag})"

    def detach(self):
        return Tensor(self.value.copy())

    def zero_grad(self):
        self.grad = None

    # -- graph ---------------------------------------------------------
    def backward(self, seed=None):
        """Accumulate gradients of this (scalar) tensor into the leaves.

        Traversal order is fixed by construction order, so repeated calls
        on the same graph produce bitwise-identical gradients.
        """
        if seed is None:
            if self.value.ndim != 0:
                raise ValueError("backward() without seed requires a scalar")
            seed = np.asarray(1.0)
        # iterative topological sort (graphs can be thousands of nodes deep)
        topo, visited, stack = [], set(), [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent, _ in node._links:
                if id(parent) not in visited:
                    stack.append((parent, False))
        grads = {id(self): np.asarray(seed, dtype=np.float64)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            for parent, vjp in node._links:
                pg = vjp(g)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators -------------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __getitem__(self, idx):
        return take(self, idx)


def astensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, links):
    """Build a result tensor, recording only grad-requiring parents."""
    out = Tensor(value)
    if _grad_enabled:
        live = tuple(
            (p, vjp) for p, vjp in links if p.requires_grad or p._links
        )
        if live:
            out._links = live
    return out


# -- elementwise arithmetic ------------------------------------------------

def add(a, b):
    a, b = astensor(a), astensor(b)
    return _make(
        a.value + b.value,
        [
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(g, b.value.shape)),
        ],
    )


def sub(a, b):
    a, b = astensor(a), astensor(b)
    return _make(
        a.value - b.value,
        [
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(-g, b.value.shape)),
        ],
    )


def mul(a, b):
    a, b = astensor(a), astensor(b)
    return _make(
        a.value * b.value,
        [
            (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
        ],
    )


def div(a, b):
    a, b = astensor(a), astensor(b)
    return _make(
        a.value / b.value,
        [
            (a, lambda g: _unbroadcast(g / b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(-g * a.value / b.value**2, b.value.shape)),
        ],
    )


def power(a, exponent):
    a = astensor(a)
    e = float(exponent)
    return _make(
        a.value**e,
        [(a, lambda g: g * e * a.value ** (e - 1.0))],
    )


def exp(a):
    a = astensor(a)
    out_val = np.exp(a.value)
    return _make(out_val, [(a, lambda g: g * out_val)])


def log(a):
    a = astensor(a)
    return _make(np.log(a.value), [(a, lambda g: g / a.value)])


def sqrt(a):
    a = astensor(a)
    out_val = np.sqrt(a.value)
    return _make(out_val, [(a, lambda g: g * 0.5 / out_val)])


def tanh(a):
    a = astensor(a)
    out_val = np.tanh(a.value)
    return _make(out_val, [(a, lambda g: g * (1.0 - out_val**2))])


def sigmoid(a):
    a = astensor(a)
    out_val = 1.0 / (1.0 + np.exp(-a.value))
    return _make(out_val, [(a, lambda g: g * out_val * (1.0 - out_val))])


def clamp_min(a, lo):
    """max(a, lo); gradient flows where a >= lo."""
    a = astensor(a)
    lo = float(lo)
    mask = a.value >= lo
    return _make(np.maximum(a.value, lo), [(a, lambda g: g * mask)])


def clamp_max(a, hi):
    """min(a, hi); gradient flows where a <= hi."""
    a = astensor(a)
    hi = float(hi)
    mask = a.value <= hi
    return _make(np.minimum(a.value, hi), [(a, lambda g: g * mask)])


# -- reductions and shaping --------------------------------------------------

def sum_(a, axis=None, keepdims=False):
    a = astensor(a)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.value.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.value.shape).copy()

    return _make(a.value.sum(axis=axis, keepdims=keepdims), [(a, vjp)])


def mean_(a, axis=None, keepdims=False):
    a = astensor(a)
    if axis is None:
        n = a.value.size
    else:
        n = a.value.shape[axis]

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g / n, a.value.shape).copy()
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg / n, a.value.shape).copy()

    return _make(a.value.mean(axis=axis, keepdims=keepdims), [(a, vjp)])


def cumsum(a):
    """Cumulative sum of a 1-D tensor."""
    a = astensor(a)
    if a.value.ndim != 1:
        raise ValueError("cumsum implemented for 1-D tensors only")
    return _make(
        np.cumsum(a.value),
        [(a, lambda g: np.cumsum(g[::-1])[::-1])],
    )


def reshape(a, shape):
    a = astensor(a)
    return _make(
        a.value.reshape(shape),
        [(a, lambda g: g.reshape(a.value.shape))],
    )


def transpose(a):
    a = astensor(a)
    return _make(a.value.T, [(a, lambda g: g.T)])


def take(a, idx):
    """Basic/fancy indexing; duplicated indices accumulate in the backward."""
    a = astensor(a)

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return out

    return _make(a.value[idx], [(a, vjp)])


def concat(tensors, axis=0):
    tensors = [astensor(t) for t in tensors]
    sizes = [t.value.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    links = []
    for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
        sl = [slice(None)] * tensors[0].value.ndim
        sl[axis] = slice(int(lo), int(hi))
        links.append((t, lambda g, sl=tuple(sl): g[sl]))
    return _make(np.concatenate([t.value for t in tensors], axis=axis), links)


def stack_rows(vectors):
    """Stack 1-D tensors into a matrix, one per row."""
    return concat([reshape(v, (1, -1)) for v in vectors], axis=0)


# -- linear algebra ----------------------------------------------------------

def matmul(a, b):
    a, b = astensor(a), astensor(b)
    av, bv = a.value, b.value
    out_val = av @ bv
    if av.ndim == 2 and bv.ndim == 2:
        links = [
            (a, lambda g: g @ bv.T),
            (b, lambda g: av.T @ g),
        ]
    elif av.ndim == 2 and bv.ndim == 1:
        links = [
            (a, lambda g: np.outer(g, bv)),
            (b, lambda g: av.T @ g),
        ]
    elif av.ndim == 1 and bv.ndim == 2:
        links = [
            (a, lambda g: bv @ g),
            (b, lambda g: np.outer(av, g)),
        ]
    elif av.ndim == 1 and bv.ndim == 1:
        links = [
            (a, lambda g: g * bv),
            (b, lambda g: g * av),
        ]
    else:
        raise ValueError(f"matmul: unsupported ranks {av.ndim} and {bv.ndim}")
    return _make(out_val, links)


def dot(a, b):
    return matmul(a, b)


# -- composites --------------------------------------------------------------

def softmax(a, axis=-1):
    """Numerically stable softmax; the max shift is detached (exact either way)."""
    a = astensor(a)
    shift = np.max(a.value, axis=axis, keepdims=True)
    e = exp(sub(a, shift))
    return div(e, sum_(e, axis=axis, keepdims=True))


def l2_normalize(a, axis=-1, eps=0.0):
    """Rows (or the vector) scaled to unit Euclidean norm."""
    a = astensor(a)
    sq = sum_(mul(a, a), axis=axis, keepdims=True)
    if eps:
        sq = add(sq, eps)
    return div(a, sqrt(sq))


def cosine_rows(a, b):
    """Pairwise cosine similarities between rows of two matrices: (M,D),(K,D)->(M,K)."""
    return matmul(l2_normalize(a, axis=1), transpose(l2_normalize(b, axis=1)))

"""Small define-by-run reverse-mode differentiation engine over numpy arrays.

Every value is a float64 ``numpy.ndarray``.  Operations build ``Node``
objects that remember their parents and a closure mapping the output
gradient to parent gradients; ``backward`` walks the record in reverse
creation order.  Binary elementwise ops broadcast like numpy and reduce
gradients back to each operand's shape.
"""

from __future__ import annotations

import itertools

import numpy as np

__all__ = [
    "Node", "ShapeError", "DomainError", "GraphUsageError",
    "constant", "parameter", "matmul", "transpose", "add", "sub", "hadamard",
    "sigmoid", "tanh", "exp", "log", "neg", "scale", "rsub", "elementwise",
    "softmax", "logsumexp", "cross_entropy", "concat", "split", "mix",
    "sum_all", "straight_through", "backward", "zero_grad",
]

_ids = itertools.count()


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


class DomainError(ValueError):
    """Input lies outside an operation's domain."""


class GraphUsageError(RuntimeError):
    """The graph API was used incorrectly."""


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad",
                 "id", "name")

    def __init__(self, value, parents=(), backward_fn=None,
                 requires_grad=None, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self.grad = None
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Node{label}(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return hadamard(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self):
        backward(self)


def constant(value, name=None):
    return Node(value, requires_grad=False, name=name)


def parameter(value, name=None):
    return Node(value, requires_grad=True, name=name)


def _lift(x):
    return x if isinstance(x, Node) else constant(x)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(a, b, op):
    if a.value.shape == b.value.shape:
        return a.value.shape
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    """Matrix product; a 1-D left operand is a row, a 1-D right operand a column."""
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value
    if not (1 <= av.ndim <= 2 and 1 <= bv.ndim <= 2) or av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {av.shape} by {bv.shape}")
    a2 = av.reshape(-1, av.shape[-1])
    b2 = bv.reshape(bv.shape[0], -1)
    out = av @ bv

    def fn(g):
        g2 = g.reshape(a2.shape[0], b2.shape[1])
        ga = (g2 @ b2.T).reshape(av.shape) if a.requires_grad else None
        gb = (a2.T @ g2).reshape(bv.shape) if b.requires_grad else None
        return ga, gb

    return Node(out, (a, b), fn)


def transpose(a):
    a = _lift(a)
    return Node(a.value.T, (a,), lambda g: (g.T,))


def concat(nodes, axis=0):
    nodes = [_lift(n) for n in nodes]
    values = [n.value for n in nodes]
    try:
        out = np.concatenate(values, axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: incompatible shapes {[v.shape for v in values]}") from None
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Node(out, nodes, fn)


def split(a, sections, axis=-1):
    """Split ``a`` into ``sections`` equal parts along ``axis``."""
    a = _lift(a)
    size = a.value.shape[axis]
    if size % sections:
        raise ShapeError(f"split: axis of size {size} not divisible by {sections}")
    width = size // sections
    ax = axis % a.value.ndim
    outs = []
    for i in range(sections):
        index = [slice(None)] * a.value.ndim
        index[ax] = slice(i * width, (i + 1) * width)
        index = tuple(index)

        def fn(g, index=index):
            full = np.zeros_like(a.value)
            full[index] = g
            return (full,)

        outs.append(Node(a.value[index], (a,), fn))
    return outs


def mix(weights, stacked):
    """Weighted sum over the second-to-last axis.

    ``weights`` has shape ``[..., J]`` and ``stacked`` ``[..., J, n]``; the
    result is ``sum_j weights[..., j] * stacked[..., j, :]``.
    """
    w, s = _lift(weights), _lift(stacked)
    if s.value.shape[:-1] != w.value.shape:
        raise ShapeError(f"mix: weights {w.value.shape} do not match stacked "
                         f"{s.value.shape}")
    wv, sv = w.value, s.value

    def fn(g):
        gw = np.einsum("...jn,...n->...j", sv, g) if w.requires_grad else None
        gs = wv[..., None] * g[..., None, :] if s.requires_grad else None
        return gw, gs

    return Node(np.einsum("...j,...jn->...n", wv, sv), (w, s), fn)


def sum_all(a):
    a = _lift(a)
    shape = a.value.shape
    return Node(a.value.sum(), (a,), lambda g: (np.full(shape, g),))


# ---------------------------------------------------------------------------
# elementwise

def add(a, b):
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "add")
    sa, sb = a.value.shape, b.value.shape
    return Node(a.value + b.value, (a, b),
                lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "sub")
    sa, sb = a.value.shape, b.value.shape
    return Node(a.value - b.value, (a, b),
                lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def hadamard(a, b):
    a, b = _lift(a), _lift(b)
    _broadcast_shape(a, b, "hadamard")
    av, bv = a.value, b.value

    def fn(g):
        return (_unbroadcast(g * bv, av.shape) if a.requires_grad else None,
                _unbroadcast(g * av, bv.shape) if b.requires_grad else None)

    return Node(av * bv, (a, b), fn)


def rsub(c, a):
    """``c - a`` for a python scalar ``c``."""
    a = _lift(a)
    return Node(c - a.value, (a,), lambda g: (-g,))


def scale(a, c):
    a = _lift(a)
    c = float(c)
    return Node(a.value * c, (a,), lambda g: (g * c,))


def neg(a):
    a = _lift(a)
    return Node(-a.value, (a,), lambda g: (-g,))


def _sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    a = _lift(a)
    s = _sigmoid(a.value)
    return Node(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a):
    a = _lift(a)
    t = np.tanh(a.value)
    return Node(t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a):
    a = _lift(a)
    e = np.exp(a.value)
    return Node(e, (a,), lambda g: (g * e,))


def log(a):
    a = _lift(a)
    if np.any(a.value <= 0):
        raise DomainError("log: input must be strictly positive")
    v = a.value
    return Node(np.log(v), (a,), lambda g: (g / v,))


_UNARY = {"sigmoid": sigmoid, "tanh": tanh, "exp": exp, "log": log, "neg": neg}
_BINARY = {"add": add, "sub": sub, "hadamard": hadamard}


def elementwise(tag, *operands, constant=None):
    """Dispatch a pointwise operation by name.

    ``scale-by-constant`` takes one operand plus ``constant``.
    """
    if tag in _UNARY:
        (x,) = operands
        return _UNARY[tag](x)
    if tag in _BINARY:
        a, b = operands
        return _BINARY[tag](a, b)
    if tag == "scale-by-constant":
        (x,) = operands
        return scale(x, constant)
    raise ValueError(f"unknown elementwise op {tag!r}")


# ---------------------------------------------------------------------------
# softmax family (all along the last axis)

def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a):
    a = _lift(a)
    y = _softmax(a.value)

    def fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Node(y, (a,), fn)


def logsumexp(a):
    """Log-sum-exp over the last axis, keeping that axis with size 1."""
    a = _lift(a)
    x = a.value
    mx = x.max(axis=-1, keepdims=True)
    out = mx + np.log(np.exp(x - mx).sum(axis=-1, keepdims=True))

    def fn(g):
        return (g * np.exp(x - out),)

    return Node(out, (a,), fn)


def cross_entropy(logits, target, weights=None):
    """Weighted sum of ``-log softmax(logits)[target]`` over rows.

    ``logits`` is ``[C]`` with an integer ``target`` or ``[N, C]`` with an
    integer array ``target`` of length N.  ``weights`` (length N) defaults to
    ones.  Returns a scalar node.
    """
    logits = _lift(logits)
    x = logits.value
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    t = np.atleast_1d(np.asarray(target))
    if t.shape != (x2.shape[0],):
        raise ShapeError(f"cross_entropy: targets {t.shape} for logits {x.shape}")
    if not np.issubdtype(t.dtype, np.integer):
        if np.any(t != np.floor(t)):
            raise IndexError("cross_entropy: targets must be integers")
        t = t.astype(np.int64)
    n_class = x2.shape[1]
    if np.any(t < 0) or np.any(t >= n_class):
        raise IndexError(f"cross_entropy: target out of range [0, {n_class})")
    w = np.ones(x2.shape[0]) if weights is None else np.asarray(weights, np.float64)
    rows = np.arange(x2.shape[0])
    mx = x2.max(axis=1, keepdims=True)
    lse = mx + np.log(np.exp(x2 - mx).sum(axis=1, keepdims=True))
    losses = lse[:, 0] - x2[rows, t]
    value = float(np.dot(w, losses))

    def fn(g):
        p = np.exp(x2 - lse)
        p[rows, t] -= 1.0
        grad = p * (w * g)[:, None]
        return (grad[0] if single else grad,)

    return Node(value, (logits,), fn)


def straight_through(y):
    """One-hot of ``argmax(y)`` in the forward pass, identity gradient."""
    y = _lift(y)
    idx = np.argmax(y.value, axis=-1)
    hard = np.zeros_like(y.value)
    np.put_along_axis(hard, idx[..., None], 1.0, axis=-1)
    return Node(hard, (y,), lambda g: (g,))


# ---------------------------------------------------------------------------
# backward pass

def _reachable(root):
    seen = {root.id: root}
    stack = [root]
    while stack:
        node = stack.pop()
        for p in node.parents:
            if p.requires_grad and p.id not in seen:
                seen[p.id] = p
                stack.append(p)
    return sorted(seen.values(), key=lambda n: n.id, reverse=True)


def backward(loss):
    """Accumulate d(loss)/d(node) into ``.grad`` of every requires-grad leaf.

    Leaf gradients are summed into any existing ``.grad`` (so a parameter
    reused across timesteps, or across several backward calls, accumulates);
    call ``zero_grad`` between optimizer steps.
    """
    if loss.value.size != 1:
        raise GraphUsageError(
            f"backward needs a scalar loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return
    order = _reachable(loss)
    pending = {loss.id: np.ones_like(loss.value)}
    for node in order:
        g = pending.pop(node.id, None)
        if g is None:
            continue
        if node.backward_fn is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.id in pending:
                pending[parent.id] = pending[parent.id] + pg
            else:
                pending[parent.id] = pg


def zero_grad(nodes):
    for n in nodes:
        n.grad = None

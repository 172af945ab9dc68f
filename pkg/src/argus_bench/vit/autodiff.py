"""Minimal reverse-mode differentiation over numpy arrays.

Every op builds a :class:`Node` holding its value and a closure that maps the
output gradient to parent gradients. Composite layers (layer norm, softmax,
GELU, cross entropy, L2 normalisation) are fused so their derivatives are
written out by hand rather than assembled from elementwise pieces.
"""
import numpy as np
from scipy.special import erf

_SQRT1_2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


class Node:
    __slots__ = ("value", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, value, parents=(), backward_fn=None, requires_grad=None, name=None):
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in parents)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(shape={self.value.shape}, name={self.name!r}, requires_grad={self.requires_grad})"


def leaf(value, requires_grad=False, name=None):
    return Node(value, requires_grad=requires_grad, name=name)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _op(value, parents, backward_fn):
    node = Node(value, parents)
    if node.requires_grad:
        node.backward_fn = backward_fn
    return node


def add(a, b):
    return _op(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    return _op(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b):
    return _op(a.value * b.value, (a, b),
               lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)))


def scale(a, c):
    c = float(c)
    return _op(a.value * c, (a,), lambda g: (g * c,))


def matmul(a, b):
    def back(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _op(a.value @ b.value, (a, b), back)


def reshape(a, shape):
    return _op(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes):
    inv = np.argsort(axes)
    return _op(a.value.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def take(a, idx, axis=0):
    """``np.take`` along ``axis``; gradient scatters back with ``np.add.at``."""
    def back(g):
        out = np.zeros_like(a.value)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0) if np.ndim(idx) else g)
        return (out,)

    return _op(np.take(a.value, idx, axis=axis), (a,), back)


def concat(nodes, axis=-2):
    """Concatenate along a negative ``axis``, broadcasting any leading (batch) dimensions."""
    tail = -axis
    lead = np.broadcast_shapes(*(n.shape[:n.value.ndim - tail] for n in nodes))
    values = [np.broadcast_to(n.value, lead + n.shape[n.value.ndim - tail:]) for n in nodes]
    sizes = np.cumsum([v.shape[axis] for v in values])[:-1]

    def back(g):
        return tuple(_unbroadcast(part, n.shape) for part, n in zip(np.split(g, sizes, axis=axis), nodes))

    return _op(np.concatenate(values, axis=axis), tuple(nodes), back)


def mean(a, axis=None, keepdims=False):
    # accumulate at 64 bit, return in the input precision
    value = np.mean(a.value, axis=axis, dtype=np.float64, keepdims=keepdims).astype(a.value.dtype)
    count = a.value.size // max(value.size, 1)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, a.shape).astype(a.value.dtype),)

    return _op(value, (a,), back)


def gelu(a):
    x = a.value
    cdf = 0.5 * (1.0 + erf(x * _SQRT1_2))

    def back(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return (g * (cdf + x * pdf),)

    return _op(x * cdf, (a,), back)


def layer_norm(x, gamma, beta, eps=1e-6):
    """Normalise over the last axis, then apply ``gamma`` and ``beta``."""
    v = x.value
    mu = v.mean(axis=-1, keepdims=True, dtype=np.float64).astype(v.dtype)
    xc = v - mu
    var = (xc * xc).mean(axis=-1, keepdims=True, dtype=np.float64).astype(v.dtype)
    inv = 1.0 / np.sqrt(var + v.dtype.type(eps))
    xhat = xc * inv

    def back(g):
        dxhat = g * gamma.value
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        reduce_axes = tuple(range(v.ndim - 1))
        return dx, (g * xhat).sum(axis=reduce_axes), g.sum(axis=reduce_axes)

    return _op(xhat * gamma.value + beta.value, (x, gamma, beta), back)


def softmax(a, probe=None):
    z = a.value - a.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    if probe is not None:
        probe.append(y)
    return _op(y, (a,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def l2_normalize(a, min_norm=0.0):
    v = a.value
    norm = np.sqrt((v * v).sum(axis=-1, keepdims=True))
    if np.any(norm <= min_norm):
        from ..exceptions import ValidationError

        raise ValidationError("cannot L2-normalise a zero-norm embedding")
    y = v / norm
    return _op(y, (a,), lambda g: ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,))


def cross_entropy(logits, targets):
    """Mean over rows of ``-log softmax(logits)[row, targets[row]]``; leading axes are kept."""
    v = logits.value
    z = v - v.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    rows = np.arange(v.shape[-2])
    loss = -np.mean(logp[..., rows, targets], axis=-1, dtype=np.float64)

    def back(g):
        p = np.exp(logp)
        p[..., rows, targets] -= 1.0
        return (p * (np.asarray(g)[..., None, None] / v.shape[-2]),)

    return _op(np.asarray(loss, dtype=v.dtype), (logits,), back)


def mse(pred, target):
    """Mean squared error over the last two axes against a constant array."""
    diff = pred.value - target
    value = np.mean(diff.astype(np.float64) ** 2, axis=(-2, -1))
    count = diff.shape[-1] * diff.shape[-2]
    return _op(np.asarray(value, dtype=pred.value.dtype), (pred,),
               lambda g: (np.asarray(g)[..., None, None] * 2.0 * diff / count,))


def backward(root, wanted):
    """Gradients of scalar ``root`` for every node in ``wanted`` (missing entries are zero)."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    if root.value.ndim:
        raise ValueError("backward needs a scalar root")
    grads = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None) if node.backward_fn is not None else grads.get(id(node))
        if g is None or node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = grads[key] + pg if key in grads else pg
    return {n: grads.get(id(n), np.zeros_like(n.value)) for n in wanted}

"""Small reverse-mode autodiff on numpy arrays.

Every op returns a :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to parent gradients. ``backward`` walks the graph
in reverse topological order; leaf tensors created with ``requires_grad=True``
accumulate into ``.grad`` (so two backward passes without zeroing double it).
Graphs are kept after ``backward`` and can be replayed.
"""

from __future__ import annotations

import numpy as np
from scipy import special

_DEBUG = False


class GraphError(RuntimeError):
    """backward() called on something with no recorded graph."""


class NumericalError(FloatingPointError):
    """Non-finite value produced inside a forward pass."""

    def __init__(self, msg, layer=None):
        super().__init__(msg)
        self.layer = layer


def set_debug(flag: bool) -> None:
    """Check every op output for non-finite values."""
    global _DEBUG
    _DEBUG = bool(flag)


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "parents", "backward_fn", "name")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, name=None):
        v = np.asarray(value)
        if v.dtype.kind != "f":
            v = v.astype(np.float64)
        self.value = v
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    def numpy(self):
        return self.value

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self, grad=None):
        if not self.requires_grad:
            raise GraphError("tensor does not require grad; no graph to differentiate")
        if grad is None:
            if self.value.size != 1:
                raise GraphError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.value)
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.value.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node.parents:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            pgrads = node.backward_fn(g)
            for p, pg in zip(node.parents, pgrads):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
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
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, backward_fn):
    if _DEBUG and not np.all(np.isfinite(value)):
        raise NumericalError("non-finite value in forward pass")
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(value)
    return Tensor(value, True, parents, backward_fn)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --- elementwise ----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        a = as_tensor(a)
        c = b
        return _make(a.value * c, (a,), lambda g: (g * c,))
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def abs_(a) -> Tensor:
    a = as_tensor(a)
    s = np.sign(a.value)
    return _make(np.abs(a.value), (a,), lambda g: (g * s,))


def gelu(a) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    a = as_tensor(a)
    x = a.value
    cdf = 0.5 * (1.0 + special.erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return _make(x * cdf, (a,), lambda g: (g * (cdf + x * pdf),))


def dropout(a, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    a = as_tensor(a)
    if not training or rate <= 0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(a.shape) >= rate).astype(a.dtype) / (1.0 - rate)
    return _make(a.value * keep, (a,), lambda g: (g * keep,))


# --- reductions / shape ----------------------------------------------------------


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), bwd)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), 1.0 / float(n))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _make(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    shape, dtype = a.shape, a.dtype

    def bwd(g):
        out = np.zeros(shape, dtype=dtype)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.value[idx], (a,), bwd)


def concatenate(tensors, axis=-1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.value for t in ts], axis=axis), tuple(ts),
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


# --- linear algebra -------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if bv.ndim == 2 and av.ndim >= 2:
        # weight matrix: fold leading axes for one big GEMM
        def bwd(g):
            ga = g @ bv.T
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return ga, gb

        return _make(av @ bv, (a, b), bwd)

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
        gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return ga, gb

    return _make(av @ bv, (a, b), bwd)


def linear(x, w, b=None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (a,), lambda g: (y * (g - np.sum(g * y, axis=axis, keepdims=True)),))


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then ``* gamma + beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xv = x.value
    mu = xv.mean(axis=-1, keepdims=True)
    xc = xv - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gv = gamma.value

    def bwd(g):
        gg = _unbroadcast(g * xhat, gv.shape)
        gb = _unbroadcast(g, beta.shape)
        gx_hat = g * gv
        gx = rstd * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                     - xhat * np.mean(gx_hat * xhat, axis=-1, keepdims=True))
        return gx, gg, gb

    return _make(xhat * gv + beta.value, (x, gamma, beta), bwd)


def batch_norm(x, gamma, beta, running_mean, running_var, training: bool,
               momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Batch normalization over axis 0 of a ``(batch, features)`` input.

    In training mode batch statistics are used and ``running_mean`` /
    ``running_var`` (plain arrays) are updated in place.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    xv = x.value
    if not training:
        rstd = 1.0 / np.sqrt(running_var + eps)
        scale = gamma.value * rstd
        xhat = (xv - running_mean) * rstd

        def bwd_eval(g):
            return g * scale, np.sum(g * xhat, axis=0), np.sum(g, axis=0)

        return _make(xhat * gamma.value + beta.value, (x, gamma, beta), bwd_eval)
    n = xv.shape[0]
    if n < 2:
        raise ValueError("batch norm in training mode needs batch size >= 2")
    mu = xv.mean(axis=0)
    xc = xv - mu
    var = np.mean(xc * xc, axis=0)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    if running_mean is not None:
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * n / (n - 1)
    gv = gamma.value

    def bwd(g):
        gx_hat = g * gv
        gx = rstd * (gx_hat - gx_hat.mean(axis=0) - xhat * np.mean(gx_hat * xhat, axis=0))
        return gx, np.sum(g * xhat, axis=0), np.sum(g, axis=0)

    return _make(xhat * gv + beta.value, (x, gamma, beta), bwd)


def check_finite(t: Tensor, layer) -> Tensor:
    if not np.all(np.isfinite(t.value)):
        raise NumericalError(f"non-finite activation at layer {layer}", layer=layer)
    return t

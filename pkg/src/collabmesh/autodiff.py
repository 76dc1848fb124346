"""Reverse-mode automatic differentiation over dense float64 arrays.

A Tensor wraps a numpy array and (optionally) participates in a dynamically
built computation graph.  Calling ``backward()`` on a scalar output walks the
graph in reverse topological order and accumulates ``.grad`` on every tensor
created with ``requires_grad=True``.  A central-difference gradient checker is
provided as the independent oracle for every backward rule.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes violate an op's shape rule."""

    def __init__(self, op, *shapes):
        super().__init__("%s: incompatible shapes %s" % (op, " vs ".join(str(s) for s in shapes)))
        self.op = op
        self.shapes = shapes


def _unbroadcast(grad, shape):
    """Sum `grad` down to `shape` (reverses numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense n-d array of float64 with optional gradient-tape participation."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad=False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return "Tensor(shape=%s, requires_grad=%s)" % (self.shape, self.requires_grad)

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _make(value, parents, backward):
        out = Tensor(value)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    def detach(self):
        return Tensor(self.value)

    def backward(self):
        """Accumulate gradients of this scalar into every reachable leaf."""
        if self.size != 1:
            raise ValueError("backward() requires a scalar output, got shape %s" % (self.shape,))
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    def _accum(self, g):
        # no in-place update: the stored array may be aliased by a child grad
        self.grad = g if self.grad is None else self.grad + g

    def zero_grad(self):
        self.grad = None

    # -- elementwise arithmetic (numpy broadcasting; gradients unbroadcast) --

    def __add__(self, other):
        other = as_tensor(other)
        value = self.value + other.value
        def bw(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g, other.shape))
        return Tensor._make(value, (self, other), bw)

    __radd__ = __add__

    def __neg__(self):
        def bw(g):
            self._accum(-g)
        return Tensor._make(-self.value, (self,), bw)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        value = self.value * other.value
        def bw(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g * other.value, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(g * self.value, other.shape))
        return Tensor._make(value, (self, other), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        value = self.value / other.value
        def bw(g):
            if self.requires_grad:
                self._accum(_unbroadcast(g / other.value, self.shape))
            if other.requires_grad:
                other._accum(_unbroadcast(-g * self.value / other.value ** 2, other.shape))
        return Tensor._make(value, (self, other), bw)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, p):
        p = float(p)
        value = self.value ** p
        def bw(g):
            self._accum(g * p * self.value ** (p - 1.0))
        return Tensor._make(value, (self,), bw)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        value = self.value[key]
        parts = key if isinstance(key, tuple) else (key,)
        basic = all(isinstance(p, (int, np.integer, slice, type(None), type(Ellipsis)))
                    for p in parts)
        def bw(g):
            full = np.zeros_like(self.value)
            if basic:
                full[key] += g     # basic slices never alias
            else:
                np.add.at(full, key, g)
            self._accum(full)
        return Tensor._make(value, (self,), bw)

    # -- shape ops ----------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        def bw(g):
            self._accum(g.reshape(old))
        return Tensor._make(self.value.reshape(shape), (self,), bw)

    def transpose(self, *axes):
        axes = axes or None
        value = self.value.transpose(axes) if axes else self.value.T
        inv = np.argsort(axes) if axes else None
        def bw(g):
            self._accum(g.transpose(inv) if axes else g.T)
        return Tensor._make(value, (self,), bw)

    @property
    def T(self):
        return self.transpose()

    def swapaxes(self, a, b):
        def bw(g):
            self._accum(np.swapaxes(g, a, b))
        return Tensor._make(np.swapaxes(self.value, a, b), (self,), bw)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        value = self.value.sum(axis=axis, keepdims=keepdims)
        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, self.shape).copy())
        return Tensor._make(value, (self,), bw)

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def min(self, axis=None, keepdims=False):
        return _minmax(self, axis, keepdims, np.min, np.argmin)

    def max(self, axis=None, keepdims=False):
        return _minmax(self, axis, keepdims, np.max, np.argmax)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _minmax(t, axis, keepdims, redfn, argfn):
    value = redfn(t.value, axis=axis, keepdims=keepdims)
    def bw(g):
        full = np.zeros_like(t.value)
        if axis is None:
            idx = np.unravel_index(argfn(t.value), t.shape)
            full[idx] = g.sum()
        else:
            idx = argfn(t.value, axis=axis)
            gg = g if keepdims else np.expand_dims(g, axis)
            np.put_along_axis(full, np.expand_dims(idx, axis), gg, axis=axis)
        t._accum(full)
    return Tensor._make(value, (t,), bw)


# -- primitive functions ------------------------------------------------------


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0 or a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError("matmul", a.shape, b.shape)
    value = np.matmul(a.value, b.value)
    def bw(g):
        if a.requires_grad:
            if b.ndim == 1:
                ga = np.multiply.outer(g, b.value) if g.ndim else g * b.value
            else:
                ga = np.matmul(g, np.swapaxes(b.value, -1, -2))
            a._accum(_unbroadcast(ga, a.shape) if ga.shape != a.shape else ga)
        if b.requires_grad:
            if a.ndim == 1:
                gb = np.multiply.outer(a.value, g)
            elif b.ndim == 1:
                gb = (a.value * np.expand_dims(g, -1)).reshape(-1, b.shape[0]).sum(axis=0)
            else:
                gb = np.matmul(np.swapaxes(a.value, -1, -2), g)
            b._accum(_unbroadcast(gb, b.shape) if gb.shape != b.shape else gb)
    return Tensor._make(value, (a, b), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    value = np.concatenate([t.value for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])
    return Tensor._make(value, tuple(tensors), bw)


def stack(tensors, axis=0):
    return concat([t.reshape(t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors], axis=axis)


def exp(t):
    t = as_tensor(t)
    value = np.exp(t.value)
    def bw(g):
        t._accum(g * value)
    return Tensor._make(value, (t,), bw)


def log(t):
    t = as_tensor(t)
    def bw(g):
        t._accum(g / t.value)
    return Tensor._make(np.log(t.value), (t,), bw)


def sqrt(t):
    t = as_tensor(t)
    value = np.sqrt(t.value)
    def bw(g):
        t._accum(g * 0.5 / value)
    return Tensor._make(value, (t,), bw)


def tanh(t):
    t = as_tensor(t)
    value = np.tanh(t.value)
    def bw(g):
        t._accum(g * (1.0 - value ** 2))
    return Tensor._make(value, (t,), bw)


def relu(t):
    t = as_tensor(t)
    mask = t.value > 0
    def bw(g):
        t._accum(g * mask)
    return Tensor._make(t.value * mask, (t,), bw)


def leaky_relu(t, slope=0.2):
    t = as_tensor(t)
    scale = np.where(t.value > 0, 1.0, slope)
    def bw(g):
        t._accum(g * scale)
    return Tensor._make(t.value * scale, (t,), bw)


def square(t):
    return as_tensor(t) ** 2


def frobenius_sq(t):
    """Sum of squared entries (squared Frobenius norm), a scalar."""
    return square(t).sum()


def softmax(t, axis=-1):
    """Numerically stable softmax; rows along `axis` sum to 1."""
    t = as_tensor(t)
    shifted = t.value - t.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)
    def bw(g):
        inner = (g * value).sum(axis=axis, keepdims=True)
        t._accum(value * (g - inner))
    return Tensor._make(value, (t,), bw)


def layer_norm(t, gain=None, bias=None, eps=1e-5, axis=-1):
    """Normalize along `axis` to zero mean / unit variance, then affine.

    A constant input maps to zeros (pre affine).  `gain`/`bias` broadcast
    against the normalized value; both optional.
    """
    t = as_tensor(t)
    mu = t.value.mean(axis=axis, keepdims=True)
    xc = t.value - mu
    var = (xc ** 2).mean(axis=axis, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = t.shape[axis]
    def bw_norm(g):
        # d xhat / d x backward: standard layernorm gradient
        gx = inv * (g - g.mean(axis=axis, keepdims=True)
                    - xhat * (g * xhat).mean(axis=axis, keepdims=True))
        t._accum(gx)
    out = Tensor._make(xhat, (t,), bw_norm)
    if gain is not None:
        out = out * gain
    if bias is not None:
        out = out + bias
    return out


def sinc_sqrt(t):
    """sin(sqrt(x))/sqrt(x), analytic in x; series below 1e-8 for stability."""
    t = as_tensor(t)
    x = t.value
    small = x < 1e-8
    safe = np.where(small, 1.0, x)
    r = np.sqrt(safe)
    value = np.where(small, 1.0 - x / 6.0 + x ** 2 / 120.0, np.sin(r) / r)
    deriv = np.where(small, -1.0 / 6.0 + x / 60.0,
                     (np.cos(r) * r - np.sin(r)) / (2.0 * safe * r))
    def bw(g):
        t._accum(g * deriv)
    return Tensor._make(value, (t,), bw)


def versinc_sqrt(t):
    """(1 - cos(sqrt(x)))/x, analytic in x; series below 1e-8."""
    t = as_tensor(t)
    x = t.value
    small = x < 1e-8
    safe = np.where(small, 1.0, x)
    r = np.sqrt(safe)
    value = np.where(small, 0.5 - x / 24.0 + x ** 2 / 720.0, (1.0 - np.cos(r)) / safe)
    deriv = np.where(small, -1.0 / 24.0 + x / 360.0,
                     (r * np.sin(r) - 2.0 * (1.0 - np.cos(r))) / (2.0 * safe ** 2))
    def bw(g):
        t._accum(g * deriv)
    return Tensor._make(value, (t,), bw)


def take(t, indices, axis=0):
    """Gather along `axis` by an integer index array; backward scatter-adds."""
    t = as_tensor(t)
    indices = np.asarray(indices)
    value = np.take(t.value, indices, axis=axis)
    def bw(g):
        full = np.zeros_like(t.value)
        if axis == 0:
            np.add.at(full, indices, g)
        else:
            # gradient axes: t.shape[:axis] + indices.shape + rest; bring the
            # index block to the front to match full[axis-first][indices]
            moved = np.moveaxis(full, axis, 0)
            src = list(range(axis, axis + indices.ndim))
            g_front = np.moveaxis(g, src, range(indices.ndim))
            np.add.at(moved, indices, g_front)
        t._accum(full)
    return Tensor._make(value, (t,), bw)


def pairwise_sqdist(a, b):
    """All-pairs squared Euclidean distances between rows of a (n,3) and b (m,3)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-1]:
        raise ShapeError("pairwise_sqdist", a.shape, b.shape)
    a2 = square(a).sum(axis=-1, keepdims=True)
    b2 = square(b).sum(axis=-1, keepdims=True)
    cross = matmul(a, b.swapaxes(-1, -2) if b.ndim > 1 else b)
    return a2 + b2.swapaxes(-1, -2) - 2.0 * cross


# -- gradient oracle ----------------------------------------------------------


def gradients(fn, points):
    """Evaluate fn(*tensors) and return (value, [grad per point])."""
    tensors = [Tensor(p, requires_grad=True) for p in points]
    out = fn(*tensors)
    out.backward()
    return out.value, [t.grad if t.grad is not None else np.zeros_like(t.value)
                       for t in tensors]


def finite_difference_check(fn, point, eps=1e-6):
    """Max relative error between analytic and central-difference gradients.

    fn maps a single Tensor to a scalar Tensor.  Relative error per
    coordinate is |analytic - numeric| / max(1, |numeric|).
    """
    if not 0.0 < eps <= 1e-3:
        raise ValueError("eps must lie in (0, 1e-3]")
    point = np.asarray(point, dtype=np.float64)
    _, (analytic,) = gradients(fn, [point])
    flat = point.ravel()
    worst = 0.0
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = eps
        hi = fn(Tensor((flat + bump).reshape(point.shape))).value
        lo = fn(Tensor((flat - bump).reshape(point.shape))).value
        numeric = (float(hi) - float(lo)) / (2.0 * eps)
        err = abs(analytic.ravel()[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst


def finite_difference_check_multi(fn, points, eps=1e-6):
    """finite_difference_check over several inputs; returns the max error."""
    points = [np.asarray(p, dtype=np.float64) for p in points]
    worst = 0.0
    for k in range(len(points)):
        def fk(t, _k=k):
            args = [Tensor(p) for p in points]
            args[_k] = t
            return fn(*args)
        worst = max(worst, finite_difference_check(fk, points[k], eps=eps))
    return worst

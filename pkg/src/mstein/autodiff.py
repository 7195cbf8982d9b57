"""Minimal reverse-mode autodiff over numpy float64 arrays.

Just enough machinery for the encoder and losses in this package:
tensors wrap ndarrays, ops record a backward closure, and ``backward()``
walks the graph in reverse topological order. Everything runs in
float64; there is no broadcasting magic beyond numpy's own rules (the
backward pass un-broadcasts by summing over expanded axes).
"""

from __future__ import annotations

import numpy as np

from . import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    out._backward = backward
    return out


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    out._backward = backward
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    out._backward = backward
    return out


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    out._backward = backward
    return out


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data @ b.data, parents=(a, b))

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accumulate(_unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.data.shape))

    out._backward = backward
    return out


def square(a):
    a = as_tensor(a)
    out = Tensor(a.data * a.data, parents=(a,))

    def backward(g):
        a._accumulate(g * 2.0 * a.data)

    out._backward = backward
    return out


def sqrt(a):
    a = as_tensor(a)
    y = np.sqrt(a.data)
    out = Tensor(y, parents=(a,))

    def backward(g):
        a._accumulate(g * 0.5 / y)

    out._backward = backward
    return out


def exp(a):
    a = as_tensor(a)
    y = np.exp(a.data)
    out = Tensor(y, parents=(a,))

    def backward(g):
        a._accumulate(g * y)

    out._backward = backward
    return out


def log(a):
    a = as_tensor(a)
    out = Tensor(np.log(a.data), parents=(a,))

    def backward(g):
        a._accumulate(g / a.data)

    out._backward = backward
    return out


def tanh(a):
    a = as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y, parents=(a,))

    def backward(g):
        a._accumulate(g * (1.0 - y * y))

    out._backward = backward
    return out


def relu(a):
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0), parents=(a,))

    def backward(g):
        a._accumulate(g * (a.data > 0.0))

    out._backward = backward
    return out


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a):
    """tanh-approximation GELU; smooth, so finite-difference checks stay clean."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + t), parents=(a,))

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        da = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        a._accumulate(g * da)

    out._backward = backward
    return out


def _sigmoid_np(x):
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a):
    a = as_tensor(a)
    y = _sigmoid_np(a.data)
    out = Tensor(y, parents=(a,))

    def backward(g):
        a._accumulate(g * y * (1.0 - y))

    out._backward = backward
    return out


def logsigmoid(a):
    """log(sigmoid(x)) computed as -softplus(-x), stable for large |x|."""
    a = as_tensor(a)
    x = a.data
    y = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    out = Tensor(y, parents=(a,))

    def backward(g):
        # d/dx log sigmoid(x) = sigmoid(-x)
        a._accumulate(g * _sigmoid_np(-x))

    out._backward = backward
    return out


def elu_plus_one(a, floor=1e-8):
    """x+1 for x>0 else exp(x), clamped below at `floor`; keeps variances positive."""
    a = as_tensor(a)
    x = a.data
    raw = np.where(x > 0, x + 1.0, np.exp(np.minimum(x, 0.0)))
    y = np.maximum(raw, floor)
    out = Tensor(y, parents=(a,))

    def backward(g):
        slope = np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))
        a._accumulate(g * np.where(raw > floor, slope, 0.0))

    out._backward = backward
    return out


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), parents=(a,))

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    out._backward = backward
    return out


def tmean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape), parents=(a,))

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    out._backward = backward
    return out


def transpose(a, axes):
    a = as_tensor(a)
    out = Tensor(np.transpose(a.data, axes), parents=(a,))
    inv = np.argsort(axes)

    def backward(g):
        a._accumulate(np.transpose(g, inv))

    out._backward = backward
    return out


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis), parents=tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    out._backward = backward
    return out


def embedding(table, indices):
    """Row gather from a 2D table; backward scatter-adds with np.add.at."""
    table = as_tensor(table)
    indices = np.asarray(indices)
    out = Tensor(table.data[indices], parents=(table,))

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, indices.reshape(-1), g.reshape(-1, table.data.shape[1]))
        table._accumulate(gt)

    out._backward = backward
    return out


def gather_rows(a, row_idx, col_idx):
    """Select a[row_idx[i], col_idx[i], :] from a 3D tensor -> (len(idx), D)."""
    a = as_tensor(a)
    row_idx = np.asarray(row_idx)
    col_idx = np.asarray(col_idx)
    out = Tensor(a.data[row_idx, col_idx, :], parents=(a,))

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (row_idx, col_idx), g)
        a._accumulate(ga)

    out._backward = backward
    return out


def gather_pairs(a, row_idx, col_idx):
    """Select a[row_idx[i], col_idx[i]] from a 2D tensor -> (len(idx),)."""
    a = as_tensor(a)
    row_idx = np.asarray(row_idx)
    col_idx = np.asarray(col_idx)
    out = Tensor(a.data[row_idx, col_idx], parents=(a,))

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (row_idx, col_idx), g)
        a._accumulate(ga)

    out._backward = backward
    return out


def masked_fill(a, mask, value):
    """Replace entries where mask is True with a constant; grad is zero there."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    out = Tensor(np.where(mask, value, a.data), parents=(a,))

    def backward(g):
        a._accumulate(np.where(mask, 0.0, g))

    out._backward = backward
    return out


def softmax(a, axis=-1):
    """Row-max-subtracted softmax; -inf logits get exactly zero weight."""
    a = as_tensor(a)
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y, parents=(a,))

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        a._accumulate(y * (g - dot))

    out._backward = backward
    return out


def logsumexp(a, axis=-1):
    """Stabilized log-sum-exp along an axis; tolerates -inf entries."""
    a = as_tensor(a)
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    y = (m + np.log(s)).squeeze(axis)
    out = Tensor(y, parents=(a,))

    def backward(g):
        a._accumulate(np.expand_dims(g, axis) * (e / s))

    out._backward = backward
    return out


def layer_norm(x, scale, shift, eps=1e-8):
    """LayerNorm over the last axis with learned scale/shift."""
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(scale.data * xhat + shift.data, parents=(x, scale, shift))
    n = x.data.shape[-1]

    def backward(g):
        if shift.requires_grad:
            shift._accumulate(_unbroadcast(g, shift.data.shape))
        if scale.requires_grad:
            scale._accumulate(_unbroadcast(g * xhat, scale.data.shape))
        if x.requires_grad:
            gx = g * scale.data
            gv = (gx * xhat).sum(axis=-1, keepdims=True)
            gm = gx.sum(axis=-1, keepdims=True)
            x._accumulate(inv * (gx - gm / n - xhat * gv / n))

    out._backward = backward
    return out


def w2sq_pairwise(mu_a, var_a, mu_b, var_b):
    """Pairwise squared W2 distances between diagonal Gaussians.

    Shapes (N,Q,D)/(N,K,D) -> (N,Q,K); dispatches to the active kernel
    backend for both passes.
    """
    mu_a, var_a, mu_b, var_b = (as_tensor(t) for t in (mu_a, var_a, mu_b, var_b))
    sd_a = np.sqrt(var_a.data)
    sd_b = np.sqrt(var_b.data)
    y = kernels.w2sq_cross(mu_a.data, sd_a, mu_b.data, sd_b)
    out = Tensor(y, parents=(mu_a, var_a, mu_b, var_b))

    def backward(g):
        g = np.ascontiguousarray(g)
        dmu_a, dvar_a, dmu_b, dvar_b = kernels.w2sq_cross_backward(
            g, mu_a.data, sd_a, mu_b.data, sd_b
        )
        if mu_a.requires_grad:
            mu_a._accumulate(dmu_a)
        if var_a.requires_grad:
            var_a._accumulate(dvar_a)
        if mu_b.requires_grad:
            mu_b._accumulate(dmu_b)
        if var_b.requires_grad:
            var_b._accumulate(dvar_b)

    out._backward = backward
    return out


def w2sq_elementwise(mu_a, var_a, mu_b, var_b):
    """Positionwise squared W2 over the last axis: (..., D) pairs -> (...)."""
    d_mean = tsum(square(sub(mu_a, mu_b)), axis=-1)
    d_std = tsum(square(sub(sqrt(var_a), sqrt(var_b))), axis=-1)
    return add(d_mean, d_std)

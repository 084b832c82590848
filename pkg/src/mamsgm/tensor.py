"""Reverse-mode automatic differentiation over float64 numpy arrays.

Every operation builds a node in an implicit computation graph
(define-by-run).  Calling :func:`backward` on a scalar output walks the
graph once in reverse topological order and accumulates gradients
additively into every reachable tensor that requires them.  Graphs built
from disjoint leaves are fully independent, so several optimizations can
run side by side without interference.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "tensor",
    "zeros",
    "concat",
    "conv1d_causal",
    "gated_activation",
    "kl_diag_gaussian",
    "backward",
    "numeric_gradient",
    "gradient_check",
]


def _as_array(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    return arr


class Tensor:
    """A float64 array plus an optional gradient and graph linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = _as_array(data)
        if np.isnan(arr).any():
            raise ValueError("refusing to build a tensor from NaN data")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # Internal constructor for op results: skips the NaN scan on the hot
    # path and wires the node into the graph.
    @staticmethod
    def _make(data, parents, backward_fn) -> "Tensor":
        out = object.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward_fn
        else:
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._make(self.data, (), None)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"

    # -- arithmetic ----------------------------------------------------

    def __add__(self, other):
        other = _wrap(other)
        data = self.data + other.data

        def bwd(g):
            _accum(self, _unbroadcast(g, self.data.shape))
            _accum(other, _unbroadcast(g, other.data.shape))

        return Tensor._make(data, (self, other), bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g):
            _accum(self, -g)

        return Tensor._make(-self.data, (self,), bwd)

    def __sub__(self, other):
        other = _wrap(other)
        data = self.data - other.data

        def bwd(g):
            _accum(self, _unbroadcast(g, self.data.shape))
            _accum(other, _unbroadcast(-g, other.data.shape))

        return Tensor._make(data, (self, other), bwd)

    def __rsub__(self, other):
        return _wrap(other) - self

    def __mul__(self, other):
        other = _wrap(other)
        data = self.data * other.data

        def bwd(g):
            _accum(self, _unbroadcast(g * other.data, self.data.shape))
            _accum(other, _unbroadcast(g * self.data, other.data.shape))

        return Tensor._make(data, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _wrap(other)
        data = self.data / other.data

        def bwd(g):
            _accum(self, _unbroadcast(g / other.data, self.data.shape))
            _accum(
                other,
                _unbroadcast(-g * self.data / (other.data * other.data), other.data.shape),
            )

        return Tensor._make(data, (self, other), bwd)

    def __rtruediv__(self, other):
        return _wrap(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only scalar exponents are supported")
        e = float(exponent)
        data = self.data**e

        def bwd(g):
            _accum(self, g * e * self.data ** (e - 1.0))

        return Tensor._make(data, (self,), bwd)

    def __matmul__(self, other):
        other = _wrap(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul supports 2-D operands only")
        data = self.data @ other.data

        def bwd(g):
            _accum(self, g @ other.data.T)
            _accum(other, self.data.T @ g)

        return Tensor._make(data, (self, other), bwd)

    # -- shape manipulation --------------------------------------------

    def __getitem__(self, idx):
        data = self.data[idx]
        fancy = _has_integer_arrays(idx)

        def bwd(g):
            full = np.zeros_like(self.data)
            if fancy:
                # Integer-array indices may repeat; add.at folds duplicates.
                np.add.at(full, idx, g)
            else:
                full[idx] += g
            _accum(self, full)

        return Tensor._make(data, (self,), bwd)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        old = self.data.shape
        data = self.data.reshape(shape)

        def bwd(g):
            _accum(self, g.reshape(old))

        return Tensor._make(data, (self,), bwd)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], tuple):
            axes = axes[0]
        inverse = tuple(np.argsort(axes))
        data = np.transpose(self.data, axes)

        def bwd(g):
            _accum(self, np.transpose(g, inverse))

        return Tensor._make(data, (self,), bwd)

    # -- reductions ----------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        data = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            _accum(self, _spread(g, self.data.shape, axis, keepdims))

        return Tensor._make(data, (self,), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        data = self.data.mean(axis=axis, keepdims=keepdims)
        count = self.data.size if axis is None else _axis_count(self.data.shape, axis)

        def bwd(g):
            _accum(self, _spread(g, self.data.shape, axis, keepdims) / count)

        return Tensor._make(data, (self,), bwd)

    # -- elementwise nonlinearities ------------------------------------

    def tanh(self):
        data = np.tanh(self.data)

        def bwd(g):
            _accum(self, g * (1.0 - data * data))

        return Tensor._make(data, (self,), bwd)

    def sigmoid(self):
        # tanh half-angle form: stable for any magnitude, one C call.
        data = 0.5 * (1.0 + np.tanh(0.5 * self.data))

        def bwd(g):
            _accum(self, g * data * (1.0 - data))

        return Tensor._make(data, (self,), bwd)

    def exp(self):
        data = np.exp(self.data)

        def bwd(g):
            _accum(self, g * data)

        return Tensor._make(data, (self,), bwd)

    def log(self):
        data = np.log(self.data)

        def bwd(g):
            _accum(self, g / self.data)

        return Tensor._make(data, (self,), bwd)

    def sqrt(self):
        data = np.sqrt(self.data)

        def bwd(g):
            _accum(self, g * 0.5 / data)

        return Tensor._make(data, (self,), bwd)

    def clip(self, lo: float, hi: float):
        """Clamp values; gradient passes through only inside the range."""
        data = np.clip(self.data, lo, hi)
        inside = (self.data > lo) & (self.data < hi)

        def bwd(g):
            _accum(self, g * inside)

        return Tensor._make(data, (self,), bwd)


def _wrap(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor._make(_as_array(value), (), None)


def _accum(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _spread(g, shape, axis, keepdims) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape).copy() if np.ndim(g) == 0 else np.full(shape, g)
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape).copy()


def _axis_count(shape, axis) -> int:
    axes = axis if isinstance(axis, tuple) else (axis,)
    n = 1
    for ax in axes:
        n *= shape[ax % len(shape)]
    return n


def _has_integer_arrays(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return Tensor._make(data, tuple(tensors), bwd)


def conv1d_causal(x: Tensor, kernel: Tensor, dilation: int = 1) -> Tensor:
    """Dilated causal 1-D convolution with output length equal to input length.

    ``x`` has shape ``(C_in, T)`` or ``(B, C_in, T)``; ``kernel`` has shape
    ``(C_out, C_in, K)``.  The input is zero-padded on the left by
    ``(K - 1) * dilation`` so that output step ``t`` depends only on input
    steps ``<= t``.
    """
    x = _wrap(x)
    kernel = _wrap(kernel)
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise ValueError("input must be (C_in, T) or (B, C_in, T)")
    c_out, c_in, k = kernel.data.shape
    if xd.shape[1] != c_in:
        raise ValueError(f"input has {xd.shape[1]} channels, kernel expects {c_in}")
    b, t_len = xd.shape[0], xd.shape[2]
    pad = (k - 1) * dilation
    xp = np.concatenate([np.zeros((b, c_in, pad)), xd], axis=2)

    # im2col: gather the K dilated views, then run one large gemm instead
    # of a batch of tiny ones.
    cols = np.concatenate([xp[:, :, j * dilation : j * dilation + t_len] for j in range(k)], axis=1)
    cols2 = np.ascontiguousarray(cols.transpose(1, 0, 2)).reshape(k * c_in, b * t_len)
    w2 = np.concatenate([kernel.data[:, :, j] for j in range(k)], axis=1)
    out = (w2 @ cols2).reshape(c_out, b, t_len).transpose(1, 0, 2)

    def bwd(g):
        gb = g[None] if squeeze else g
        g2 = np.ascontiguousarray(gb.transpose(1, 0, 2)).reshape(c_out, b * t_len)
        gw2 = g2 @ cols2.T
        gk = np.empty_like(kernel.data)
        for j in range(k):
            gk[:, :, j] = gw2[:, j * c_in : (j + 1) * c_in]
        gcols = (w2.T @ g2).reshape(k * c_in, b, t_len).transpose(1, 0, 2)
        gx_pad = np.zeros_like(xp)
        for j in range(k):
            gx_pad[:, :, j * dilation : j * dilation + t_len] += gcols[:, j * c_in : (j + 1) * c_in, :]
        gx = gx_pad[:, :, pad:]
        _accum(x, gx[0] if squeeze else gx)
        _accum(kernel, gk)

    return Tensor._make(out[0] if squeeze else out, (x, kernel), bwd)


def gated_activation(filt: Tensor, gate: Tensor) -> Tensor:
    """Elementwise ``tanh(filt) * sigmoid(gate)``."""
    return filt.tanh() * gate.sigmoid()


def kl_diag_gaussian(mu: Tensor, sigma: Tensor) -> Tensor:
    """KL divergence of ``N(mu, diag(sigma^2))`` from the unit Gaussian.

    Summed over the trailing (latent) axis; leading axes survive, so a
    ``(B, L)`` input yields per-sample divergences of shape ``(B,)``.
    """
    var = sigma * sigma
    per_dim = (mu * mu + var - var.log() - 1.0) * 0.5
    return per_dim.sum(axis=-1)


# -- backward pass ------------------------------------------------------


def backward(out: Tensor):
    """Backpropagate from a scalar output through its graph."""
    if out.data.size != 1:
        raise ValueError("backward expects a scalar output")
    order = _topo_order(out)
    out.grad = np.ones_like(out.data)
    for node in order:
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def _topo_order(root: Tensor):
    """Reverse topological order; each reachable node appears exactly once."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    order.reverse()
    return order


# -- finite-difference checking -----------------------------------------


def numeric_gradient(fn, leaf: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar-valued ``fn`` w.r.t. ``leaf``."""
    grad = np.zeros_like(leaf.data)
    flat = leaf.data.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        hi = fn().item()
        flat[i] = keep - h
        lo = fn().item()
        flat[i] = keep
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def gradient_check(fn, leaves, h: float = 1e-5) -> float:
    """Max discrepancy between reverse-mode and central differences.

    The error is relative with a unit floor in the denominator, so tiny
    gradients are compared absolutely.  Returns the worst error over all
    leaf coordinates.
    """
    for leaf in leaves:
        leaf.zero_grad()
    out = fn()
    backward(out)
    worst = 0.0
    for leaf in leaves:
        ad = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        fd = numeric_gradient(fn, leaf, h=h)
        denom = np.maximum(1.0, np.maximum(np.abs(ad), np.abs(fd)))
        worst = max(worst, float(np.max(np.abs(ad - fd) / denom)))
    return worst

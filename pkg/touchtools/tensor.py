#!/usr/bin/env python3
# --------------------------------------------------------------------------- #
# The MIT License (MIT)                                                       #
#                                                                             #
# Copyright (c) 2024 The touchtools contributors                              #
#                                                                             #
# Permission is hereby granted, free of charge, to any person obtaining       #
# a copy of this software and associated documentation files                  #
# (the "Software"), to deal in the Software without restriction, including    #
# without limitation the rights to use, copy, modify, merge, publish,         #
# distribute, sublicense, and/or sell copies of the Software, and to permit   #
# persons to whom the Software is furnished to do so, subject to the          #
# following conditions:                                                       #
#                                                                             #
# The above copyright notice and this permission notice shall be included     #
# in all copies or substantial portions of the Software.                      #
#                                                                             #
# THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR  #
# IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,    #
# FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL     #
# THE AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER  #
# LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING     #
# FROM, OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER         #
# DEALINGS IN THE SOFTWARE.                                                   #
# --------------------------------------------------------------------------- #
"""Minimal n-dimensional array with reverse-mode automatic differentiation.

Every `Tensor` holds a `numpy` array. An operation whose inputs require
gradients records the inputs and a backward rule on its output,
so the output is also a node of the computation graph.
Calling `backward()` on a scalar walks the graph once in reverse
topological order and accumulates gradients in the leaves.
::
    import touchtools.tensor as tn

    w = tn.Tensor([[1.0, 2.0]], requires_grad=True)
    x = tn.Tensor([[3.0], [4.0]])
    loss = tn.matmul(w, x).sum()
    loss.backward()
    w.grad  # [[3, 4]]

Values are 32-bit floats; reductions accumulate in 64 bits.
The gradient checker switches the default type to 64 bits with
`default_dtype(np.float64)` so that finite differences are meaningful.
"""
import contextlib

import numpy as np

from touchtools.errors import ContractError
from touchtools.errors import DimensionError
from touchtools.errors import NumericError
from touchtools.errors import ParameterError

_DTYPE = [np.float32]


def get_dtype():
    """Return the floating point type used for new tensors."""
    return _DTYPE[0]


@contextlib.contextmanager
def default_dtype(dtype):
    """Temporarily change the floating point type of new tensors."""
    old = _DTYPE[0]
    _DTYPE[0] = dtype
    try:
        yield dtype
    finally:
        _DTYPE[0] = old


class Tensor:
    """Array value and computation graph node.

    Parameters
    ----------
    data: array_like
        The values; they are converted to the current default type.
    requires_grad: bool, optional
        It defaults to `False`.
        If it is `True` the tensor is a leaf whose gradient is stored
        in `grad` after `backward()`.
    name: str, optional
        It defaults to `None`. A label used in error messages.
    """

    __array_priority__ = 1000
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=get_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self.op = "leaf"
        self.parents = ()
        self.backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        """Return a tensor with the same values and no graph."""
        out = Tensor.__new__(Tensor)
        _init_node(out, self.data, "detach")
        return out

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f", name='{self.name}'" if self.name else ""
        return (f"Tensor(shape={self.shape}, op='{self.op}', "
                f"requires_grad={self.requires_grad}{label})")

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self)

    def take(self, indices):
        return take(self, indices)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def backward(self):
        """Accumulate the gradient of this scalar in every leaf tensor.

        Shared subexpressions receive the sum of the gradients
        of all their uses, and each node is visited exactly once.
        """
        if self.data.size != 1:
            raise ContractError("backward() needs a scalar loss, "
                                f"got shape {self.shape}")

        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}

        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue

            if node.backward_fn is None:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.array(g, dtype=node.data.dtype)
                    else:
                        node.grad = node.grad + g
                continue

            in_grads = node.backward_fn(g)
            for parent, pg in zip(node.parents, in_grads):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


def _init_node(out, data, op):
    out.data = np.asarray(data, dtype=get_dtype())
    out.requires_grad = False
    out.grad = None
    out.name = None
    out.op = op
    out.parents = ()
    out.backward_fn = None


def _result(data, parents, backward_fn, op):
    """Create the output of an operation, recording it only when needed."""
    out = Tensor.__new__(Tensor)
    _init_node(out, data, op)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    return out


def _topological_order(root):
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
        for parent in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    return order


def as_tensor(x):
    """Wrap numbers and arrays as constant tensors."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def parameter(data, name=None):
    """Return a leaf tensor that requires gradients."""
    return Tensor(data, requires_grad=True, name=name)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} "
                             "cannot be broadcast") from None


# --------------------------------------------------------------------------- #
# Elementwise operations
# --------------------------------------------------------------------------- #
def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), backward_fn, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result(a.data - b.data, (a, b), backward_fn, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward_fn(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), backward_fn, "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")

    def backward_fn(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _result(a.data / b.data, (a, b), backward_fn, "div")


def neg(a):
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent):
    """Raise to a constant scalar power."""
    a = as_tensor(a)
    p = float(exponent)

    def backward_fn(g):
        return (g * p * a.data ** (p - 1.0),)

    return _result(a.data ** p, (a,), backward_fn, "power")


def square(a):
    a = as_tensor(a)
    return _result(a.data * a.data, (a,),
                   lambda g: (2.0 * g * a.data,), "square")


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _result(out, (a,), lambda g: (0.5 * g / out,), "sqrt")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a):
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def clip(a, low, high):
    """Clamp values; the gradient is zero where clamping happened."""
    a = as_tensor(a)
    inside = (a.data >= low) & (a.data <= high)
    return _result(np.clip(a.data, low, high), (a,),
                   lambda g: (g * inside,), "clip")


def straight_through(hard, soft):
    """Return the values of `hard` with the gradient of `soft`.

    The forward value is exactly `hard`; the backward pass sends the
    incoming gradient unchanged to `soft`.
    """
    soft = as_tensor(soft)
    hard = np.asarray(hard)
    if hard.shape != soft.shape:
        raise DimensionError(f"straight_through: shapes {hard.shape} and "
                             f"{soft.shape} differ")
    return _result(hard, (soft,), lambda g: (g,), "straight_through")


def dropout(a, p, rng=None, training=True):
    """Zero elements with probability `p` and rescale the rest.

    In evaluation mode (`training=False`), or with `p=0`,
    it returns `a` itself.
    The mask is drawn from `rng`, so a seeded generator
    gives a reproducible stream of masks.
    """
    a = as_tensor(a)
    if not training or p <= 0:
        return a
    if p >= 1:
        raise ParameterError(f"dropout rate must be below 1, p={p}")
    if rng is None:
        raise ParameterError("dropout in training mode needs an rng")

    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    keep = keep.astype(a.data.dtype)
    return _result(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


# --------------------------------------------------------------------------- #
# Linear algebra, reductions, and shape manipulation
# --------------------------------------------------------------------------- #
def matmul(a, b):
    """Matrix product of the last two axes; leading axes broadcast.

    A shape mismatch raises `DimensionError` naming both shapes.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: shapes {a.shape} and {b.shape} "
                             "are not aligned")

    def backward_fn(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result(np.matmul(a.data, b.data), (a, b), backward_fn, "matmul")


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def tsum(a, axis=None, keepdims=False):
    """Sum over `axis` (an int, a tuple, or all axes)."""
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    out = np.sum(a.data, axis=axes, dtype=np.float64, keepdims=keepdims)

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.ascontiguousarray(np.broadcast_to(g, a.shape)),)

    return _result(out, (a,), backward_fn, "sum")


def mean(a, axis=None, keepdims=False):
    """Mean over `axis`, accumulated in 64 bits."""
    a = as_tensor(a)
    axes = _norm_axes(axis, a.ndim)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    out = np.sum(a.data, axis=axes, dtype=np.float64,
                 keepdims=keepdims) / count

    def backward_fn(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.ascontiguousarray(np.broadcast_to(g / count, a.shape)),)

    return _result(out, (a,), backward_fn, "mean")


def reshape(a, shape):
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {a.shape} "
                             f"into {tuple(shape)}") from None
    return _result(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(a.data, axes), (a,),
                   lambda g: (np.transpose(g, inverse),), "transpose")


def take(a, indices):
    """Select rows (axis 0) of `a`; this is also the embedding lookup."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < -a.shape[0] or idx.max() >= a.shape[0]):
        raise DimensionError(f"take: indices out of range for {a.shape}")

    def backward_fn(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _result(a.data[idx], (a,), backward_fn, "take")


def embedding(table, ids):
    """Look up the rows `ids` of an embedding `table`."""
    return take(table, ids)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: incompatible shapes {shapes}") from None

    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tensors, backward_fn, "concat")


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    parts = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:])
             for t in tensors]
    return concat(parts, axis=axis)


# --------------------------------------------------------------------------- #
# Normalizations and losses
# --------------------------------------------------------------------------- #
def _check_finite(x, op):
    if np.isnan(x).any():
        raise NumericError(f"{op}: NaN in the input")


def softmax(x, axis=-1):
    """Softmax along `axis`, computed after subtracting the maximum."""
    x = as_tensor(x)
    _check_finite(x.data, "softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    total = np.sum(e, axis=axis, dtype=np.float64, keepdims=True)
    out = (e / total).astype(x.data.dtype)

    def backward_fn(g):
        dot = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _result(out, (x,), backward_fn, "softmax")


def log_softmax(x, axis=-1):
    x = as_tensor(x)
    _check_finite(x.data, "log_softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    total = np.sum(np.exp(shifted), axis=axis, dtype=np.float64,
                   keepdims=True)
    out = (shifted - np.log(total)).astype(x.data.dtype)

    def backward_fn(g):
        soft = np.exp(out)
        return (g - soft * np.sum(g, axis=axis, keepdims=True),)

    return _result(out, (x,), backward_fn, "log_softmax")


def cross_entropy(logits, targets):
    """Mean cross-entropy of rows of `logits` against `targets`.

    Parameters
    ----------
    logits: Tensor
        Shape `[N, K]`, unnormalized scores.
    targets: array of int, or Tensor
        Either `N` class indices, or a `[N, K]` tensor of target
        distributions (for instance straight-through one-hot samples),
        in which case gradients also flow into the targets.

    Returns
    -------
    Tensor
        A scalar, `-mean_i sum_k t_ik log softmax(logits)_ik`.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise DimensionError("cross_entropy: logits must be [N, K], "
                             f"got {logits.shape}")

    if isinstance(targets, Tensor):
        if targets.shape != logits.shape:
            raise DimensionError(f"cross_entropy: targets {targets.shape} "
                                 f"do not match logits {logits.shape}")
        ls = log_softmax(logits, axis=-1)
        return neg(mean(tsum(mul(targets, ls), axis=-1)))

    t = np.asarray(targets, dtype=np.int64)
    n, k = logits.shape
    if t.shape != (n,) or (n and (t.min() < 0 or t.max() >= k)):
        raise DimensionError(f"cross_entropy: {t.shape[0] if t.ndim else 0} "
                             f"targets for logits {logits.shape}")
    _check_finite(logits.data, "cross_entropy")

    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    total = np.sum(np.exp(shifted), axis=-1, dtype=np.float64, keepdims=True)
    ls = shifted - np.log(total)
    rows = np.arange(n)
    out = -np.sum(ls[rows, t], dtype=np.float64) / max(n, 1)

    def backward_fn(g):
        grad = np.exp(ls)
        grad[rows, t] -= 1.0
        return (grad * (g / max(n, 1)),)

    return _result(out, (logits,), backward_fn, "cross_entropy")


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to mean 0 and variance 1, then scale and shift.

    Slices with zero variance are normalized to zeros.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if eps <= 0:
        raise ParameterError(f"layer_norm: eps must be positive, eps={eps}")
    if gamma.shape != x.shape[-1:] or beta.shape != x.shape[-1:]:
        raise DimensionError(f"layer_norm: gamma {gamma.shape} and "
                             f"beta {beta.shape} must match {x.shape[-1:]}")

    n = x.shape[-1]
    mu = np.sum(x.data, axis=-1, dtype=np.float64, keepdims=True) / n
    centered = x.data - mu
    var = np.sum(centered * centered, axis=-1, dtype=np.float64,
                 keepdims=True) / n
    flat = var <= 1e-12
    inv = np.where(flat, 0.0, 1.0 / np.sqrt(var + eps))
    xhat = (centered * inv).astype(x.data.dtype)
    out = xhat * gamma.data + beta.data

    def backward_fn(g):
        lead = tuple(range(g.ndim - 1))
        g_gamma = np.sum(g * xhat, axis=lead)
        g_beta = np.sum(g, axis=lead)
        dxhat = g * gamma.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        g_x = (inv * (dxhat - m1 - xhat * m2)).astype(x.data.dtype)
        return g_x, g_gamma, g_beta

    return _result(out, (x, gamma, beta), backward_fn, "layer_norm")


# --------------------------------------------------------------------------- #
# Convolution
# --------------------------------------------------------------------------- #
def dilated_causal_conv1d(x, kernel, dilation=1):
    """Dilated causal convolution of a `[C_in, L]` sequence.

    The output at time `s` is
    ::
        y[o, s] = sum_i sum_c kernel[o, c, i] * x[c, s - dilation * i]

    with `x` left padded by `(k - 1) * dilation` zeros,
    so the output has length `L` and depends only on times `<= s`.
    The tap `i` of the kernel multiplies the input `i * dilation` steps
    in the past.

    Parameters
    ----------
    x: Tensor
        Input of shape `[C_in, L]`.
    kernel: Tensor
        Weights of shape `[C_out, C_in, k]`.
    dilation: int, optional
        It defaults to 1. Distance between taps; it must be at least 1.

    Returns
    -------
    Tensor
        Output of shape `[C_out, L]`.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if int(dilation) != dilation or dilation < 1:
        raise ParameterError(f"dilation must be a positive integer, "
                             f"dilation={dilation}")
    if x.ndim != 2 or kernel.ndim != 3 or kernel.shape[1] != x.shape[0]:
        raise DimensionError(f"dilated_causal_conv1d: input {x.shape} and "
                             f"kernel {kernel.shape} are not compatible")
    k = kernel.shape[2]
    if k < 1:
        raise ParameterError("dilated_causal_conv1d: kernel size must be "
                             "at least 1")

    dilation = int(dilation)
    c_in, length = x.shape
    pad = (k - 1) * dilation
    xp = np.concatenate([np.zeros((c_in, pad), dtype=x.data.dtype), x.data],
                        axis=1)
    starts = [pad - dilation * i for i in range(k)]
    cols = np.stack([xp[:, s:s + length] for s in starts])  # [k, C_in, L]
    out = np.einsum("oci,icl->ol", kernel.data, cols)

    def backward_fn(g):
        g_kernel = np.einsum("ol,icl->oci", g, cols)
        g_cols = np.einsum("oci,ol->icl", kernel.data, g)
        g_xp = np.zeros_like(xp)
        for i, s in enumerate(starts):
            g_xp[:, s:s + length] += g_cols[i]
        return g_xp[:, pad:], g_kernel

    return _result(out, (x, kernel), backward_fn, "dilated_causal_conv1d")

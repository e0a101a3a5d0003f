"""Reverse-mode differentiable tensors backed by float64 numpy arrays.

Every op records its parents and a closure that pushes the output gradient
back to them. ``Tensor.backward`` walks the graph in reverse topological
order. Arrays are channels-last: sequences are ``(batch, time, channels)``.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import itertools
import math

import numpy as np

# creation order is a topological order of the graph: parents always exist first
_SEQ = itertools.count()


class NonFiniteError(ValueError):
    """Raised when a tensor would hold NaN or Inf."""


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    # sum out axes that numpy broadcasting added or stretched
    lead = grad.ndim - len(shape)
    if lead > 0:
        tail = grad.shape[lead:]
        grad = (np.ones(math.prod(grad.shape[:lead])) @ grad.reshape(-1, math.prod(tail))).reshape(tail)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _row_sum(a: np.ndarray) -> np.ndarray:
    # sum over the last axis, keepdims; a GEMV beats numpy's short inner-axis reduction
    return a @ np.ones((a.shape[-1], 1))


def _col_sum(a: np.ndarray) -> np.ndarray:
    # sum over every axis but the last
    a2 = a.reshape(-1, a.shape[-1])
    return np.ones(a2.shape[0]) @ a2


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq")

    def __init__(self, data, requires_grad: bool = False, check: bool = True):
        arr = np.asarray(data, dtype=np.float64)
        if check and not np.all(np.isfinite(arr)):
            raise NonFiniteError("tensor values must be finite")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._seq = next(_SEQ)

    @classmethod
    def _op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = tuple(parents) if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        out._seq = next(_SEQ)
        return out

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def _accum(self, g: np.ndarray) -> None:
        # gradients are never modified in place, so the first one can be kept by reference
        if self.grad is None:
            self.grad = np.asarray(g, dtype=np.float64)
        else:
            self.grad = self.grad + g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar tensor")
            grad = np.ones_like(self.data)
        nodes = {id(self): self}
        stack = [self]
        while stack:
            for p in stack.pop()._parents:
                if id(p) not in nodes:
                    nodes[id(p)] = p
                    stack.append(p)
        order = sorted(nodes.values(), key=lambda n: n._seq)
        for node in order:
            if node._parents:
                node.grad = None
        self._accum(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -------------------------------------------------------------- arithmetic
    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.shape))

        return Tensor._op(a.data + b.data, (a, b), back)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        a = self
        return Tensor._op(-a.data, (a,), lambda g: a._accum(-g))

    def __sub__(self, other) -> "Tensor":
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.shape))

        return Tensor._op(a.data * b.data, (a, b), back)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        return self * other ** -1.0

    def __rtruediv__(self, other) -> "Tensor":
        return as_tensor(other) * self ** -1.0

    def __pow__(self, p: float) -> "Tensor":
        a = self
        out = a.data ** p
        return Tensor._op(out, (a,), lambda g: a._accum(g * p * a.data ** (p - 1)))

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            if a.requires_grad:
                ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
                a._accum(_unbroadcast(ga, a.shape))
            if b.requires_grad:
                if b.ndim == 2 and a.ndim > 2:
                    # weight shared across leading dims: fold them into one GEMM
                    k = a.shape[-1]
                    gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
                else:
                    gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
                b._accum(gb)

        return Tensor._op(a.data @ b.data, (a, b), back)

    def __rmatmul__(self, other) -> "Tensor":
        return as_tensor(other) @ self

    # -------------------------------------------------------------- reductions
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.shape))

        return Tensor._op(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), back)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # ----------------------------------------------------------------- shaping
    def reshape(self, *shape) -> "Tensor":
        a = self
        return Tensor._op(a.data.reshape(*shape), (a,), lambda g: a._accum(g.reshape(a.shape)))

    def swapaxes(self, i: int, j: int) -> "Tensor":
        a = self
        return Tensor._op(np.swapaxes(a.data, i, j), (a,), lambda g: a._accum(np.swapaxes(g, i, j)))

    def __getitem__(self, idx) -> "Tensor":
        a = self

        def back(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accum(full)

        return Tensor._op(a.data[idx], (a,), back)

    # ---------------------------------------------------------- nonlinearities
    def tanh(self) -> "Tensor":
        a = self
        out = np.tanh(a.data)
        return Tensor._op(out, (a,), lambda g: a._accum(g * (1.0 - out * out)))

    def leaky_relu(self, slope: float = 0.1) -> "Tensor":
        a = self
        # arithmetic mask: np.where mispredicts on mixed signs and is several times slower
        scale = (a.data > 0) * (1.0 - slope) + slope
        return Tensor._op(a.data * scale, (a,), lambda g: a._accum(g * scale))

    def exp(self) -> "Tensor":
        a = self
        out = np.exp(a.data)
        return Tensor._op(out, (a,), lambda g: a._accum(g * out))

    def softmax(self, axis: int = -1) -> "Tensor":
        a = self
        out = a.data - a.data.max(axis=axis, keepdims=True)
        np.exp(out, out=out)
        out /= out.sum(axis=axis, keepdims=True)

        def back(g):
            a._accum(out * (g - (g * out).sum(axis=axis, keepdims=True)))

        return Tensor._op(out, (a,), back)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x, check=False)


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(ts, np.split(g, cuts, axis=axis)):
            if t.requires_grad:
                t._accum(piece)

    return Tensor._op(np.concatenate([t.data for t in ts], axis=axis), ts, back)


def conv1d(x: Tensor, weight: Tensor, dilation: int = 1) -> Tensor:
    """Unpadded dilated 1-D convolution.

    ``x`` is ``(B, T, Cin)`` and ``weight`` is ``(K, Cin, Cout)``; the output
    has ``T - (K - 1) * dilation`` frames.
    """
    K = weight.shape[0]
    T = x.shape[-2]
    t_out = T - (K - 1) * dilation
    if t_out < 1:
        raise ValueError(f"conv1d: kernel {K} dilation {dilation} too large for length {T}")
    xd, wd = x.data, weight.data
    out = sum(xd[..., k * dilation:k * dilation + t_out, :] @ wd[k] for k in range(K))

    def back(g):
        if x.requires_grad:
            gx = np.zeros_like(xd)
            for k in range(K):
                gx[..., k * dilation:k * dilation + t_out, :] += g @ wd[k].T
            x._accum(gx)
        if weight.requires_grad:
            cin = xd.shape[-1]
            g2 = g.reshape(-1, g.shape[-1])
            gw = np.stack([
                xd[..., k * dilation:k * dilation + t_out, :].reshape(-1, cin).T @ g2
                for k in range(K)
            ])
            weight._accum(gw)

    return Tensor._op(np.asarray(out), (x, weight), back)


def depthwise_conv1d(x: Tensor, weight: Tensor, dilation: int = 1) -> Tensor:
    """Per-channel unpadded 1-D convolution; ``weight`` is ``(K, C)``."""
    K = weight.shape[0]
    T = x.shape[-2]
    t_out = T - (K - 1) * dilation
    if t_out < 1:
        raise ValueError(f"depthwise_conv1d: kernel {K} dilation {dilation} too large for length {T}")
    xd, wd = x.data, weight.data
    out = sum(xd[..., k * dilation:k * dilation + t_out, :] * wd[k] for k in range(K))

    def back(g):
        if x.requires_grad:
            gx = np.zeros_like(xd)
            for k in range(K):
                gx[..., k * dilation:k * dilation + t_out, :] += g * wd[k]
            x._accum(gx)
        if weight.requires_grad:
            gw = np.stack([
                _col_sum(xd[..., k * dilation:k * dilation + t_out, :] * g)
                for k in range(K)
            ])
            weight._accum(gw)

    return Tensor._op(np.asarray(out), (x, weight), back)


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` as one graph node; ``weight`` is ``(n_in, n_out)``."""
    xd, wd = x.data, weight.data
    out = xd @ wd
    if bias is not None:
        out += bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(g):
        g2 = g.reshape(-1, g.shape[-1])
        if x.requires_grad:
            x._accum(g @ wd.T)
        if weight.requires_grad:
            weight._accum(xd.reshape(-1, xd.shape[-1]).T @ g2)
        if bias is not None and bias.requires_grad:
            bias._accum(_col_sum(g2))

    return Tensor._op(out, parents, back)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit variance, then scale and shift."""
    xd = x.data
    n = xd.shape[-1]
    centred = xd - _row_sum(xd) / n
    inv = 1.0 / np.sqrt(_row_sum(centred * centred) / n + eps)
    xhat = centred * inv
    out = xhat * gain.data + bias.data

    def back(g):
        if x.requires_grad:
            gh = g * gain.data
            x._accum(inv * (gh - _row_sum(gh) / n - xhat * (_row_sum(gh * xhat) / n)))
        if gain.requires_grad:
            gain._accum(_col_sum(g * xhat))
        if bias.requires_grad:
            bias._accum(_col_sum(g))

    return Tensor._op(out, (x, gain, bias), back)


def attention(x: Tensor, wq: Tensor, bq: Tensor, wk: Tensor, wv: Tensor, bv: Tensor, scale: float) -> Tensor:
    """``softmax(scale * q k^T) v`` with q, k, v projected from ``x`` (k unbiased), as one graph node.

    The three projections share one GEMM in both directions.
    """
    xd = x.data
    c = wq.shape[1]
    W = np.concatenate([wq.data, wk.data, wv.data], axis=1)
    qkv = xd @ W
    qkv[..., :c] += bq.data
    qkv[..., 2 * c:] += bv.data
    q, k, v = qkv[..., :c], qkv[..., c:2 * c], qkv[..., 2 * c:]
    w = q @ np.swapaxes(k, -1, -2)
    w *= scale
    w -= w.max(axis=-1, keepdims=True)
    np.exp(w, out=w)
    w /= _row_sum(w)

    def back(g):
        gw = g @ np.swapaxes(v, -1, -2)
        gl = w * (gw - _row_sum(gw * w))
        gl *= scale
        G = np.concatenate([gl @ k, np.swapaxes(gl, -1, -2) @ q, np.swapaxes(w, -1, -2) @ g], axis=-1)
        if x.requires_grad:
            x._accum(G @ W.T)
        G2 = G.reshape(-1, 3 * c)
        gW = xd.reshape(-1, xd.shape[-1]).T @ G2
        gb = _col_sum(G2)
        for t, grad in ((wq, gW[:, :c]), (wk, gW[:, c:2 * c]), (wv, gW[:, 2 * c:]),
                        (bq, gb[:c]), (bv, gb[2 * c:])):
            if t.requires_grad:
                t._accum(grad)

    return Tensor._op(w @ v, (x, wq, bq, wk, wv, bv), back)


def replicate_pad(x: Tensor, left: int, right: int) -> Tensor:
    """Pad the time axis by repeating the first and last frames."""
    xd = x.data
    T = xd.shape[-2]
    out = np.concatenate([np.repeat(xd[..., :1, :], left, axis=-2), xd,
                          np.repeat(xd[..., -1:, :], right, axis=-2)], axis=-2)

    def back(g):
        gx = g[..., left:left + T, :].copy()
        if left:
            gx[..., 0, :] += g[..., :left, :].sum(axis=-2)
        if right:
            gx[..., -1, :] += g[..., left + T:, :].sum(axis=-2)
        x._accum(gx)

    return Tensor._op(out, (x,), back)


def time_map(matrix: np.ndarray, x: Tensor) -> Tensor:
    """Apply a fixed ``(T_out, T_in)`` linear operator along the time axis."""
    A = np.asarray(matrix, dtype=np.float64)

    def back(g):
        x._accum(A.T @ g)

    return Tensor._op(A @ x.data, (x,), back)

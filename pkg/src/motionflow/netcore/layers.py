"""Parametric layers on top of :mod:`motionflow.netcore.tensor`."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .tensor import Tensor, affine, attention, conv1d, depthwise_conv1d, layer_norm, replicate_pad


class ShapeError(ValueError):
    pass


def glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Module:
    """Container of named parameters and sub-modules.

    Assigning a :class:`Module` or a grad-requiring :class:`Tensor` to an
    attribute registers it, in assignment order.
    """

    in_features: int | None = None
    out_features: int | None = None

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_children", {})
        object.__setattr__(self, "name", type(self).__name__)
        object.__setattr__(self, "_has_forward", False)

    def __setattr__(self, key, value):
        if isinstance(value, Module):
            self._children[key] = value
            value._rename(f"{self.name}.{key}")
        elif isinstance(value, Tensor) and value.requires_grad:
            self._params[key] = value
        object.__setattr__(self, key, value)

    def _rename(self, name: str) -> None:
        object.__setattr__(self, "name", name)
        for k, child in self._children.items():
            child._rename(f"{name}.{k}")

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for k, p in self._params.items():
            yield prefix + k, p
        for k, child in self._children.items():
            yield from child.named_parameters(prefix + k + ".")

    def parameters(self) -> dict[str, Tensor]:
        return dict(self.named_parameters())

    def modules(self) -> Iterator["Module"]:
        yield self
        for child in self._children.values():
            yield from child.modules()

    def __call__(self, x: Tensor) -> Tensor:
        object.__setattr__(self, "_has_forward", True)
        return self.forward(x)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def describe(self) -> list[str]:
        """Ordered one-line descriptions of every leaf layer."""
        out = []
        for m in self.modules():
            if not m._children:
                out.append(f"{m.name}: {m!r}")
        return out

    def _expect_channels(self, x: Tensor, n: int) -> None:
        if x.ndim == 0 or x.shape[-1] != n:
            raise ShapeError(f"layer '{self.name}' expects {n} input channels, got shape {x.shape}")


class Affine(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.in_features, self.out_features = n_in, n_out
        self.weight = glorot(rng, (n_in, n_out), n_in, n_out)
        self.bias = zeros((n_out,)) if bias else None

    def forward(self, x):
        self._expect_channels(x, self.in_features)
        return affine(x, self.weight, self.bias)

    def __repr__(self):
        return f"Affine({self.in_features}->{self.out_features})"


class Tanh(Module):
    def forward(self, x):
        return x.tanh()

    def __repr__(self):
        return "Tanh()"


class LeakyReLU(Module):
    def __init__(self, slope: float = 0.1):
        super().__init__()
        self.slope = slope

    def forward(self, x):
        return x.leaky_relu(self.slope)

    def __repr__(self):
        return f"LeakyReLU({self.slope})"


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        self.layers = list(layers)
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)
        sized = [m for m in layers if m.in_features is not None]
        if sized:
            self.in_features = sized[0].in_features
            self.out_features = sized[-1].out_features

    def forward(self, x):
        for layer in self.layers:
            x = layer(x)
        return x


def mlp(sizes: list[int], rng: np.random.Generator, activation=Tanh) -> Sequential:
    """Affine stack with ``activation`` between (not after) the layers."""
    layers: list[Module] = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(Affine(a, b, rng))
        if i < len(sizes) - 2:
            layers.append(activation())
    return Sequential(*layers)


def conv_out_length(length: int, kernel: int, dilation: int) -> int:
    """Frames left after an unpadded convolution."""
    return length - (kernel - 1) * dilation


class Conv1d(Module):
    def __init__(self, c_in: int, c_out: int, kernel: int, rng: np.random.Generator, dilation: int = 1):
        super().__init__()
        self.in_features, self.out_features = c_in, c_out
        self.kernel, self.dilation = kernel, dilation
        self.weight = glorot(rng, (kernel, c_in, c_out), c_in * kernel, c_out * kernel)
        self.bias = zeros((c_out,))

    def forward(self, x):
        self._expect_channels(x, self.in_features)
        if conv_out_length(x.shape[-2], self.kernel, self.dilation) < 1:
            raise ShapeError(
                f"layer '{self.name}': kernel {self.kernel} dilation {self.dilation} "
                f"needs more than {x.shape[-2]} frames")
        return conv1d(x, self.weight, self.dilation) + self.bias

    def __repr__(self):
        return f"Conv1d({self.in_features}->{self.out_features}, k={self.kernel}, d={self.dilation})"


class DepthwiseConv1d(Module):
    """Per-channel convolution with replicate-edge padding (length preserved)."""

    def __init__(self, channels: int, kernel: int, rng: np.random.Generator, dilation: int = 1):
        super().__init__()
        self.in_features = self.out_features = channels
        self.kernel, self.dilation = kernel, dilation
        self.weight = glorot(rng, (kernel, channels), kernel, kernel)
        self.bias = zeros((channels,))

    def forward(self, x):
        self._expect_channels(x, self.in_features)
        total = (self.kernel - 1) * self.dilation
        padded = replicate_pad(x, total // 2, total - total // 2)
        return depthwise_conv1d(padded, self.weight, self.dilation) + self.bias

    def __repr__(self):
        return f"DepthwiseConv1d({self.in_features}, k={self.kernel}, d={self.dilation})"


class LayerNorm(Module):
    def __init__(self, channels: int, eps: float = 1e-5):
        super().__init__()
        self.in_features = self.out_features = channels
        self.eps = eps
        self.gain = Tensor(np.ones(channels), requires_grad=True)
        self.bias = zeros((channels,))

    def forward(self, x):
        self._expect_channels(x, self.in_features)
        return layer_norm(x, self.gain, self.bias, self.eps)

    def __repr__(self):
        return f"LayerNorm({self.in_features})"


class SelfAttention(Module):
    """Single-head scaled dot-product self-attention over the time axis.

    The key projection carries no bias: a key bias shifts every logit of a
    query by the same amount and has an identically zero gradient.
    """

    def __init__(self, channels: int, rng: np.random.Generator):
        super().__init__()
        self.in_features = self.out_features = channels
        self.query = Affine(channels, channels, rng)
        self.key = Affine(channels, channels, rng, bias=False)
        self.value = Affine(channels, channels, rng)
        self.out = Affine(channels, channels, rng)

    def forward(self, x):
        self._expect_channels(x, self.in_features)
        a = attention(x, self.query.weight, self.query.bias, self.key.weight, self.value.weight, self.value.bias,
                      1.0 / math.sqrt(self.in_features))
        return self.out(a)

    def __repr__(self):
        return f"SelfAttention({self.in_features})"

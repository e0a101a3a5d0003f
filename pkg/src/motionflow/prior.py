"""Prior network: frame-wise mean sequence from the first motion and content.

Each block is depthwise conv (kernel 3, replicate edges) -> pointwise affine
-> leaky rectifier -> single-head self-attention -> residual -> layer norm.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .netcore import (Affine, DepthwiseConv1d, LayerNorm, Module, SelfAttention, ShapeError, Tensor,
                      as_tensor, forward)


@dataclass
class PriorInput:
    first_motion: object  # (c,) or (B, c)
    content: object  # (T, c) or (B, T, c)


class ConvAttentionBlock(Module):
    def __init__(self, width: int, rng: np.random.Generator, kernel: int = 3):
        super().__init__()
        self.in_features = self.out_features = width
        self.depthwise = DepthwiseConv1d(width, kernel, rng)
        self.pointwise = Affine(width, width, rng)
        self.attention = SelfAttention(width, rng)
        self.norm = LayerNorm(width)

    def forward(self, h):
        z = self.pointwise(self.depthwise(h)).leaky_relu(0.1)
        return self.norm(h + self.attention(z))


class PriorNet(Module):
    def __init__(self, channels: int, width: int, rng: np.random.Generator, n_blocks: int = 4):
        super().__init__()
        self.in_features = self.out_features = channels
        self.inp = Affine(channels, width, rng)
        self.blocks = [ConvAttentionBlock(width, rng) for _ in range(n_blocks)]
        for i, b in enumerate(self.blocks):
            setattr(self, f"block{i}", b)
        self.head = Affine(width, channels, rng)

    def forward(self, x):
        h = self.inp(x)
        for b in self.blocks:
            h = b(h)
        return self.head(h)


def prior_summed_input(inp: PriorInput) -> Tensor:
    first, content = as_tensor(inp.first_motion), as_tensor(inp.content)
    if content.ndim < 2 or content.shape[-2] < 1:
        raise ShapeError(f"content must be (..., T, c) with T >= 1, got {content.shape}")
    if first.shape[-1] != content.shape[-1] or first.shape[:-1] != content.shape[:-2]:
        raise ShapeError(f"first motion {first.shape} does not match content {content.shape}")
    lead = first.shape[:-1]
    return content + first.reshape(*lead, 1, first.shape[-1])


def prior_forward(net: PriorNet, inp: PriorInput) -> Tensor:
    """Mean sequence ``mu`` shaped like ``inp.content``."""
    x = prior_summed_input(inp)
    if x.shape[-1] != net.in_features:
        raise ShapeError(f"prior network expects {net.in_features} channels, got {x.shape[-1]}")
    return forward(net, x)

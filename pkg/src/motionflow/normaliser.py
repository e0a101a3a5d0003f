"""Autoencoder motion normaliser and the Gaussian prior likelihood.

The encoder and decoder act frame by frame, so both commute with any
permutation of the time axis.
"""
from __future__ import annotations

import math

import numpy as np

from .netcore import Module, ShapeError, Tensor, as_tensor, forward, mlp

LOG_2PI = math.log(2.0 * math.pi)


def make_autoencoder(dim: int, compressed: int, hidden: int, rng: np.random.Generator) -> tuple[Module, Module]:
    if compressed >= dim:
        raise ValueError(f"compressed dim {compressed} must be below motion dim {dim}")
    enc = mlp([dim, hidden, hidden, compressed], rng)
    dec = mlp([compressed, hidden, hidden, dim], rng)
    return enc, dec


def encode(f_m, enc: Module) -> np.ndarray:
    f_m = np.asarray(f_m, dtype=np.float64)
    if f_m.shape[-1] != enc.in_features:
        raise ShapeError(f"encoder expects {enc.in_features} motion dims, got {f_m.shape[-1]}")
    return forward(enc, Tensor(f_m)).data


def decode(f_c, dec: Module) -> np.ndarray:
    f_c = np.asarray(f_c, dtype=np.float64)
    if f_c.shape[-1] != dec.in_features:
        raise ShapeError(f"decoder expects {dec.in_features} compressed dims, got {f_c.shape[-1]}")
    return forward(dec, Tensor(f_c)).data


def ae_loss(f_m_hat, f_m):
    """Mean squared error; differentiable when given Tensors."""
    if isinstance(f_m_hat, Tensor) or isinstance(f_m, Tensor):
        r = as_tensor(f_m_hat) - as_tensor(f_m)
        if r.shape != as_tensor(f_m).shape:
            raise ShapeError("ae_loss arguments differ in shape")
        return (r * r).mean()
    a, b = np.asarray(f_m_hat, dtype=np.float64), np.asarray(f_m, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"ae_loss arguments differ in shape: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def prior_nll(f_c, mu):
    """-sum_j log N(f_c[j]; mu[j], I) over the frames of one ``(T, c)`` sequence.

    Leading batch axes, if any, are summed as well.
    """
    if isinstance(f_c, Tensor) or isinstance(mu, Tensor):
        f_c, mu = as_tensor(f_c), as_tensor(mu)
        if f_c.shape != mu.shape:
            raise ShapeError(f"prior_nll shapes differ: {f_c.shape} vs {mu.shape}")
        frames = f_c.data.size // f_c.shape[-1]
        r = f_c - mu
        return (r * r).sum() * 0.5 + frames * f_c.shape[-1] * 0.5 * LOG_2PI
    a, b = np.asarray(f_c, dtype=np.float64), np.asarray(mu, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"prior_nll shapes differ: {a.shape} vs {b.shape}")
    frames = a.size // a.shape[-1]
    return float(0.5 * np.sum((a - b) ** 2) + frames * a.shape[-1] * 0.5 * LOG_2PI)

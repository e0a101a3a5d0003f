"""Optimal-transport conditional flow matching over motion-code sequences.

Sequences are ``(..., T, c)`` arrays. The vector-field network consumes the
channel concatenation ``[x_t, t, mu]`` frame by frame and returns a field of
the same shape as ``x_t``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .netcore import Module, NonFiniteError, ShapeError, Tensor, as_tensor, concat, mlp

SIGMA_MIN = 1e-4


class DivergenceError(NonFiniteError):
    """The sampler produced a non-finite state."""


@dataclass(frozen=True)
class FlowConfig:
    sigma_min: float = SIGMA_MIN
    euler_steps: int = 10
    temperature: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.sigma_min <= 1e-2:
            raise ValueError(f"sigma_min must lie in (0, 1e-2], got {self.sigma_min}")
        if self.euler_steps < 1:
            raise ValueError("euler_steps must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be nonnegative")


@dataclass
class FlowBatch:
    x0: np.ndarray  # (B, T, c) source noise
    x1: np.ndarray  # (B, T, c) data targets
    t: np.ndarray  # (B,)
    mu: object  # (B, T, c) prior means, array or Tensor

    def __post_init__(self):
        mu_shape = self.mu.shape
        if self.x0.shape != self.x1.shape or self.x0.shape != tuple(mu_shape):
            raise ShapeError(f"x0 {self.x0.shape}, x1 {self.x1.shape}, mu {mu_shape} must agree")
        if self.t.shape != self.x0.shape[:1]:
            raise ShapeError(f"t has shape {self.t.shape}, expected ({self.x0.shape[0]},)")
        if np.any((self.t < 0) | (self.t > 1)):
            raise ValueError("t must lie in [0, 1]")


def _t_like(t, x: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    return t.reshape(t.shape + (1,) * (x.ndim - t.ndim))


def ot_path(x0, x1, t, sigma_min: float = SIGMA_MIN) -> np.ndarray:
    """phi_t(x0) = (1 - (1 - sigma_min) t) x0 + t x1, with ``t`` per leading index."""
    x0, x1 = np.asarray(x0, dtype=np.float64), np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ShapeError(f"x0 {x0.shape} and x1 {x1.shape} differ")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any((t_arr < 0) | (t_arr > 1)):
        raise ValueError(f"t must lie in [0, 1], got {t}")
    tt = _t_like(t_arr, x0)
    return (1.0 - (1.0 - sigma_min) * tt) * x0 + tt * x1


def target_field(x0, x1, sigma_min: float = SIGMA_MIN) -> np.ndarray:
    x0, x1 = np.asarray(x0, dtype=np.float64), np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ShapeError(f"x0 {x0.shape} and x1 {x1.shape} differ")
    return x1 - (1.0 - sigma_min) * x0


def flow_input(x, t, mu) -> Tensor:
    """Channel concatenation ``[x, t, mu]`` with ``t`` broadcast over frames."""
    x, mu = as_tensor(x), as_tensor(mu)
    tt = np.broadcast_to(_t_like(t, x.data), x.shape[:-1] + (1,))
    return concat([x, Tensor(tt, check=False), mu], axis=-1)


def make_vector_field(channels: int, hidden: int, rng: np.random.Generator, depth: int = 3) -> Module:
    """Per-frame tanh MLP ``(2c + 1) -> c``."""
    return mlp([2 * channels + 1] + [hidden] * (depth - 1) + [channels], rng)


def cfm_loss(model: Module, batch: FlowBatch, cfg: FlowConfig) -> Tensor:
    """Mean squared residual between the network field and the OT target field."""
    x_t = ot_path(batch.x0, batch.x1, batch.t, cfg.sigma_min)
    u = target_field(batch.x0, batch.x1, cfg.sigma_min)
    v = model(flow_input(x_t, batch.t, batch.mu))
    if v.shape != u.shape:
        raise ShapeError(f"vector field output {v.shape} does not match target {u.shape}")
    r = v - u
    return (r * r).mean()


def sample(model: Module, mu, cfg: FlowConfig, rng: np.random.Generator) -> np.ndarray:
    """Forward-Euler integration from ``mu + temperature * N(0, I)`` over t in [0, 1]."""
    mu = np.asarray(mu, dtype=np.float64)
    x = mu + cfg.temperature * rng.standard_normal(mu.shape)
    h = 1.0 / cfg.euler_steps
    lead = mu.shape[:-2]
    for n in range(cfg.euler_steps):
        t = np.full(lead, n * h)
        v = model(flow_input(x, t, mu)).data
        if v.shape != x.shape:
            raise ShapeError(f"vector field output {v.shape} does not match state {x.shape}")
        if not np.all(np.isfinite(v)):
            raise DivergenceError(f"non-finite vector field at Euler step {n}")
        x = x + h * v
    return x


class OracleField(Module):
    """Conditional OT field toward a fixed target ``x1``.

    ``v(x, t) = (x1 - (1 - sigma) x) / (1 - (1 - sigma) t)`` equals the
    constant ``x1 - (1 - sigma) x0`` along the straight path from any ``x0``.
    """

    def __init__(self, x1, sigma_min: float = SIGMA_MIN):
        super().__init__()
        self.x1 = np.asarray(x1, dtype=np.float64)
        self.sigma = sigma_min
        c = self.x1.shape[-1]
        self.in_features, self.out_features = 2 * c + 1, c

    def forward(self, inp):
        c = self.out_features
        x, t = inp.data[..., :c], inp.data[..., c:c + 1]
        s = 1.0 - self.sigma
        return Tensor((self.x1 - s * x) / (1.0 - s * t))


class ConstantField(Module):
    """Returns a fixed array (plus optional offset) regardless of input."""

    def __init__(self, value, offset: float = 0.0):
        super().__init__()
        self.value = np.asarray(value, dtype=np.float64) + offset
        c = self.value.shape[-1]
        self.in_features, self.out_features = 2 * c + 1, c

    def forward(self, inp):
        return Tensor(np.broadcast_to(self.value, inp.shape[:-1] + (self.out_features,)).copy())


def export_sequence_csv(seq: np.ndarray, path) -> None:
    seq = np.asarray(seq)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame"] + [f"c{k}" for k in range(seq.shape[1])])
        for j, row in enumerate(seq):
            w.writerow([j] + [repr(float(v)) for v in row])


def read_sequence_csv(path) -> np.ndarray:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([[float(v) for v in r[1:]] for r in rows])

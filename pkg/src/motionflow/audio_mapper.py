"""Multi-receptive-field fusion mapper from content features to lip motion.

No branch pads its input. Each residual path loses ``(kernel - 1) * dilation``
frames to its convolution and is stretched back to the input length by
endpoint-preserving linear interpolation before the skip connection.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netcore import Affine, Conv1d, Module, ShapeError, Tensor, as_tensor, conv_out_length, time_map

DEFAULT_BRANCHES = ((3, 1), (3, 2), (5, 1))


def energy(f_t_up) -> np.ndarray:
    """Per-frame channel-averaged norm ``||frame|| / sqrt(k)``, shape ``(..., T, 1)``."""
    f = np.asarray(f_t_up, dtype=np.float64)
    k = f.shape[-1]
    return np.sqrt(np.sum(f * f, axis=-1, keepdims=True) / k)


def interpolation_matrix(src_len: int, dst_len: int) -> np.ndarray:
    """``(dst_len, src_len)`` linear-interpolation weights mapping endpoint to endpoint."""
    if src_len < 1:
        raise ValueError("source length must be >= 1")
    if dst_len < 1:
        raise ValueError("target length must be >= 1")
    A = np.zeros((dst_len, src_len))
    if src_len == 1 or dst_len == 1:
        A[:, 0] = 1.0
        if dst_len == 1:
            A[0] = 0.0
            A[0, 0] = 1.0
        return A
    pos = np.arange(dst_len) * ((src_len - 1) / (dst_len - 1))
    pos[-1] = src_len - 1
    lo = np.minimum(np.floor(pos).astype(int), src_len - 2)
    w = pos - lo
    rows = np.arange(dst_len)
    A[rows, lo] = 1.0 - w
    A[rows, lo + 1] += w
    return A


def temporal_interpolate(seq, target_len: int):
    """Resample ``(..., L, k)`` to ``(..., target_len, k)``; accepts arrays or Tensors."""
    if target_len < 1:
        raise ValueError(f"target length must be >= 1, got {target_len}")
    src_len = seq.shape[-2]
    if isinstance(seq, Tensor):
        return seq if src_len == target_len else time_map(interpolation_matrix(src_len, target_len), seq)
    seq = np.asarray(seq, dtype=np.float64)
    if src_len == target_len:
        return seq.copy()
    return interpolation_matrix(src_len, target_len) @ seq


@dataclass
class ContentFeatures:
    e_t: np.ndarray  # (..., L, k) token embeddings
    f_t_up: np.ndarray  # (..., T, k) duration-upsampled content feature
    energy: np.ndarray = field(default=None)  # (..., T, 1)

    def __post_init__(self):
        if self.energy is None:
            self.energy = energy(self.f_t_up)
        if self.e_t.shape[-2] > self.f_t_up.shape[-2]:
            raise ShapeError("more tokens than frames")

    def condition(self) -> np.ndarray:
        """Channel concatenation ``[interp(e_t), f_t_up, energy]`` over T frames."""
        T = self.f_t_up.shape[-2]
        return np.concatenate([temporal_interpolate(self.e_t, T), self.f_t_up, self.energy], axis=-1)


@dataclass(frozen=True)
class MrfConfig:
    branches: tuple = DEFAULT_BRANCHES
    channels: int = 16

    def __post_init__(self):
        if len(self.branches) < 2:
            raise ValueError("MRF needs at least two branches")
        if len(set(map(tuple, self.branches))) != len(self.branches):
            raise ValueError("MRF branches must have distinct (kernel, dilation) pairs")

    def min_length(self) -> int:
        return max(k * d for k, d in self.branches)


class MrfBranch(Module):
    def __init__(self, c_in: int, channels: int, kernel: int, dilation: int, rng: np.random.Generator):
        super().__init__()
        self.in_features = self.out_features = c_in
        self.kernel, self.dilation = kernel, dilation
        self.conv = Conv1d(c_in, channels, kernel, rng, dilation=dilation)
        self.proj = Affine(channels, c_in, rng)

    def shrunk_length(self, T: int) -> int:
        return conv_out_length(T, self.kernel, self.dilation)

    def residual(self, x: Tensor) -> Tensor:
        T = x.shape[-2]
        if self.shrunk_length(T) < 1:
            raise ShapeError(f"branch '{self.name}' (kernel {self.kernel}, dilation {self.dilation}) "
                             f"leaves no frames from {T}")
        r = self.proj(self.conv(x).leaky_relu(0.1))
        return temporal_interpolate(r, T)

    def forward(self, x):
        return x + self.residual(x)


class MrfMapper(Module):
    def __init__(self, cfg: MrfConfig, c_in: int, out_dim: int, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.in_features, self.out_features = c_in, out_dim
        self.branches = [MrfBranch(c_in, cfg.channels, k, d, rng) for k, d in cfg.branches]
        for i, b in enumerate(self.branches):
            setattr(self, f"branch{i}", b)
        self.out = Affine(c_in, out_dim, rng)

    def horizon(self, T: int) -> int:
        """Output frames (from the start) that can depend on input frame 0."""
        h = 1
        for b in self.branches:
            t_short = b.shrunk_length(T)
            # conv frame 0 feeds interpolated positions strictly below 1
            h = max(h, T if t_short == 1 else int(np.ceil((T - 1) / (t_short - 1))))
        return h

    def forward(self, x):
        self._expect_channels(x, self.in_features)
        total = None
        for b in self.branches:
            y = b(x)
            total = y if total is None else total + y
        return self.out(total * (1.0 / len(self.branches)))


def mrf_forward(cfg: MrfConfig, nets: MrfMapper, x) -> Tensor:
    x = as_tensor(x)
    if x.shape[-1] != nets.in_features:
        raise ShapeError(f"mapper expects {nets.in_features} condition channels, got {x.shape[-1]}")
    for (k, d), b in zip(cfg.branches, nets.branches):
        if conv_out_length(x.shape[-2], k, d) < 1:
            raise ShapeError(f"branch '{b.name}' (kernel {k}, dilation {d}) leaves no frames from {x.shape[-2]}")
    return nets(x)


def condition_channels(embed_dim: int, feature_dim: int) -> int:
    return embed_dim + feature_dim + 1


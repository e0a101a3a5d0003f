"""Orthonormal motion-code bank, motion extraction and identity subtraction.

A visual feature decomposes as ``f = f_id + f_m`` where the motion part
``f_m`` is a combination of the bank's orthonormal directions.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .netcore import Affine, Module, Tensor, forward, mlp


@dataclass(frozen=True)
class CodeBank:
    directions: np.ndarray  # (M, d)

    @property
    def n_codes(self) -> int:
        return self.directions.shape[0]

    @property
    def dim(self) -> int:
        return self.directions.shape[1]

    def gram_error(self) -> float:
        D = self.directions
        return float(np.linalg.norm(D @ D.T - np.eye(self.n_codes)))

    def projector(self) -> np.ndarray:
        return self.directions.T @ self.directions

    def complement(self) -> np.ndarray:
        """Orthonormal rows spanning the orthogonal complement of the bank."""
        _, _, vt = np.linalg.svd(self.directions, full_matrices=True)
        return vt[self.n_codes:]


@dataclass(frozen=True)
class MotionFeature:
    f_m: np.ndarray
    magnitudes: np.ndarray


@dataclass(frozen=True)
class StyleStack:
    layers: tuple  # one style vector per generator layer, index 0 is layer 1
    lip_layers: frozenset


class RankError(ValueError):
    pass


def orthonormalize(bank: CodeBank | np.ndarray, tol: float = 1e-10) -> CodeBank:
    """Modified Gram-Schmidt over the rows, preserving their span."""
    D = np.array(bank.directions if isinstance(bank, CodeBank) else bank, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] > D.shape[1]:
        raise RankError(f"need M <= d rows, got shape {D.shape}")
    out = D.copy()
    for i in range(out.shape[0]):
        v = out[i]
        scale = np.linalg.norm(D[i])
        for j in range(i):
            v = v - (out[j] @ v) * out[j]
        n = np.linalg.norm(v)
        if scale == 0 or n <= tol * max(scale, 1.0):
            raise RankError(f"row {i} is linearly dependent on rows 0..{i - 1}")
        out[i] = v / n
    return CodeBank(out)


def random_bank(n_codes: int, dim: int, rng: np.random.Generator) -> CodeBank:
    return orthonormalize(rng.normal(size=(n_codes, dim)))


def make_extractor(dim: int, n_codes: int, hidden: int, rng: np.random.Generator) -> Module:
    """5-layer tanh MLP mapping a visual feature to code magnitudes."""
    return mlp([dim, hidden, hidden, hidden, hidden, n_codes], rng)


def projection_extractor(bank: CodeBank) -> Affine:
    """Exact linear extractor: magnitudes are the coordinates along each code."""
    layer = Affine(bank.dim, bank.n_codes, np.random.default_rng(0))
    layer.weight.data[...] = bank.directions.T
    layer.bias.data[...] = 0.0
    return layer


def extract_motion(f, bank: CodeBank, extractor: Module) -> MotionFeature:
    f = np.asarray(f, dtype=np.float64)
    if f.shape[-1] != bank.dim:
        raise ValueError(f"feature has {f.shape[-1]} dims, bank expects {bank.dim}")
    if extractor.out_features != bank.n_codes:
        raise ValueError(f"extractor emits {extractor.out_features} magnitudes, bank has {bank.n_codes} codes")
    mags = forward(extractor, Tensor(f)).data
    return MotionFeature(mags @ bank.directions, mags)


def subtract_identity(f, f_m) -> np.ndarray:
    f = np.asarray(f, dtype=np.float64)
    f_m = f_m.f_m if isinstance(f_m, MotionFeature) else np.asarray(f_m, dtype=np.float64)
    if f.shape != f_m.shape:
        raise ValueError(f"shape mismatch {f.shape} vs {f_m.shape}")
    return f - f_m


def fuse_style(f_id, f_m, f_lip, lip_layers: Iterable[int] = (6, 7), n_layers: int = 7) -> StyleStack:
    """Per-layer generator styles: ``f_id + f_lip`` on lip layers, else ``f_id + f_m``.

    Layers are numbered from 1.
    """
    lip = frozenset(int(i) for i in lip_layers)
    bad = sorted(i for i in lip if not 1 <= i <= n_layers)
    if bad:
        raise ValueError(f"lip layer indices {bad} outside 1..{n_layers}")
    f_id, f_m, f_lip = (np.asarray(a, dtype=np.float64) for a in (f_id, f_m, f_lip))
    layers = tuple(f_id + (f_lip if n in lip else f_m) for n in range(1, n_layers + 1))
    return StyleStack(layers, lip)


def export_bank_csv(bank: CodeBank, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"d{j}" for j in range(bank.dim)])
        for row in bank.directions:
            w.writerow([repr(float(v)) for v in row])


def read_bank_csv(path) -> CodeBank:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return CodeBank(np.array([[float(v) for v in r] for r in rows]))

"""Evaluation metrics on motion-code sequences."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def div_std(samples) -> float:
    """Population standard deviation pooled over samples, frames and coordinates."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise ValueError("div_std needs at least one sample")
    return float(np.std(x))


def jerk(seq) -> float:
    """Mean squared second temporal difference of a ``(T, d)`` sequence."""
    x = np.asarray(seq, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[-2] < 3:
        raise ValueError(f"jerk needs at least 3 frames, got {x.shape[-2]}")
    dd = x[..., 2:, :] - 2.0 * x[..., 1:-1, :] + x[..., :-2, :]
    return float(np.mean(dd * dd))


def recon_rmse(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def identity_consistency(f_ids) -> float:
    """Mean pairwise cosine similarity of ``N >= 2`` identity vectors."""
    X = np.asarray(f_ids, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("identity_consistency needs an (N >= 2, d) array")
    norms = np.linalg.norm(X, axis=1)
    if np.any(norms == 0):
        raise ValueError(f"zero identity vector at rows {np.flatnonzero(norms == 0).tolist()}")
    U = X / norms[:, None]
    C = U @ U.T
    iu = np.triu_indices(len(X), k=1)
    return float(C[iu].mean())


def moment_errors(samples, data) -> tuple[float, float]:
    """Relative errors of pooled per-frame mean and covariance.

    The mean error is scaled by the data's root total variance (the data
    mean itself may sit near zero); the covariance error is a relative
    Frobenius norm.
    """
    s = np.asarray(samples).reshape(-1, np.shape(samples)[-1])
    x = np.asarray(data).reshape(-1, np.shape(data)[-1])
    cov_x = np.cov(x, rowvar=False, bias=True)
    cov_s = np.cov(s, rowvar=False, bias=True)
    mean_err = np.linalg.norm(s.mean(0) - x.mean(0)) / np.sqrt(np.trace(cov_x))
    cov_err = np.linalg.norm(cov_s - cov_x) / np.linalg.norm(cov_x)
    return float(mean_err), float(cov_err)


REPORT_HEADER = ["metric", "value", "seed", "config_hash"]


def write_report(path, rows) -> None:
    """Rows of ``(metric, value, seed, config_hash)``."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_HEADER)
        for metric, value, seed, chash in rows:
            w.writerow([metric, repr(float(value)), seed, chash])


def read_report(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))

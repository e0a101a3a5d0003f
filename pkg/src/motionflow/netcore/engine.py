"""Model-level forward/backward, finite-difference checking and Adam."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .layers import Module, ShapeError
from .tensor import NonFiniteError, Tensor, as_tensor


def forward(model: Module, x) -> Tensor:
    x = as_tensor(x)
    if model.in_features is not None and (x.ndim == 0 or x.shape[-1] != model.in_features):
        raise ShapeError(
            f"layer '{model.name}' expects {model.in_features} input channels, got shape {x.shape}")
    out = model(x)
    if model.out_features is not None and out.shape[-1] != model.out_features:
        raise ShapeError(f"layer '{model.name}' produced shape {out.shape}, "
                         f"declared {model.out_features} output channels")
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteError(f"non-finite output from '{model.name}'")
    return out


def backward(model: Module, loss: Tensor) -> dict[str, np.ndarray]:
    """Backpropagate a scalar loss; one gradient per parameter, same shape."""
    if not any(m._has_forward for m in model.modules()):
        raise RuntimeError(f"backward on '{model.name}' before any forward pass")
    if loss.data.size != 1:
        raise ValueError("loss must be a scalar")
    params = model.parameters()
    for p in params.values():
        p.grad = None
    loss.backward()
    for m in model.modules():
        object.__setattr__(m, "_has_forward", False)
    return {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
            for k, p in params.items()}


def check_gradients(params: dict[str, Tensor], closure: Callable[[], Tensor], step: float = 1e-6,
                    max_entries: int | None = None, rng: np.random.Generator | None = None,
                    per_entry: bool = False) -> float:
    """Max relative error between backprop and central differences.

    For each parameter the error is ``|a - cd| / (|a| + |cd| + 1e-12)`` with
    ``|.|`` the Euclidean norm over the checked entries; ``per_entry=True``
    takes the max over individual scalars instead (stricter, but entries
    whose true gradient is below the finite-difference roundoff floor can
    fail it in float64).

    ``closure`` rebuilds the scalar loss from the current parameter values.
    With ``max_entries`` only that many randomly chosen entries per
    parameter are perturbed.
    """
    if not (0.0 < step <= 1e-3):
        raise ValueError(f"finite-difference step must lie in (0, 1e-3], got {step}")
    for p in params.values():
        p.grad = None
    closure().backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        ga = analytic[name].reshape(-1)[idx]
        cd = np.empty(len(idx))
        for n, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = closure().item()
            flat[i] = orig - step
            down = closure().item()
            flat[i] = orig
            cd[n] = (up - down) / (2 * step)
        if per_entry:
            err = float(np.max(np.abs(ga - cd) / (np.abs(ga) + np.abs(cd) + 1e-12), initial=0.0))
        else:
            err = float(np.linalg.norm(ga - cd) / (np.linalg.norm(ga) + np.linalg.norm(cd) + 1e-12))
        worst = max(worst, err)
    return worst


def grad_check(model: Module, x, loss_fn: Callable[[Tensor], Tensor], step: float = 1e-6,
               max_entries: int | None = None, rng: np.random.Generator | None = None,
               per_entry: bool = False) -> float:
    x = as_tensor(x)
    return check_gradients(model.parameters(), lambda: loss_fn(forward(model, x)), step,
                           max_entries=max_entries, rng=rng, per_entry=per_entry)


class Adam:
    """Adam; ``weight_decay`` > 0 adds decoupled decay ``p -= lr * wd * p`` (AdamW)."""

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if weight_decay < 0:
            raise ValueError("weight decay must be nonnegative")
        self.params = params
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.t = 0
        # moments live in one flat buffer so a step is a handful of vector ops
        self._keys = list(params)
        sizes = [params[k].data.size for k in self._keys]
        self._cuts = np.cumsum(sizes)[:-1]
        self.m = np.zeros(sum(sizes))
        self.v = np.zeros(sum(sizes))

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        if not self._keys:
            return
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        g = np.concatenate([grads[k].ravel() for k in self._keys])
        m, v = self.m, self.v
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        for k, u in zip(self._keys, np.split(update, self._cuts)):
            p = self.params[k].data
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            p -= u.reshape(p.shape)

"""Finite-difference gradient checks over every layer type and composed loss."""
from __future__ import annotations

import numpy as np

from .audio_mapper import MrfConfig, MrfMapper, mrf_forward
from .cfm import FlowBatch, FlowConfig, cfm_loss, make_vector_field
from .netcore import (Affine, Conv1d, DepthwiseConv1d, LayerNorm, LeakyReLU, SelfAttention, Sequential, Tanh,
                      Tensor, check_gradients, grad_check)
from .normaliser import ae_loss, make_autoencoder, prior_nll
from .prior import ConvAttentionBlock, PriorInput, PriorNet, prior_forward

TOLERANCE = 1e-4
STEP = 1e-6
# the deep prior's loss carries a large constant, so its roundoff floor needs a wider step
PRIOR_STEP = 1e-5


def _projected(shape, rng):
    # a random linear read-out keeps every gradient entry O(1)
    w = rng.normal(size=shape)
    return lambda y: (y * w).sum()


def _layer_case(layer, x, rng, max_entries, step):
    y_shape = layer(Tensor(x)).shape
    return grad_check(layer, x, _projected(y_shape, rng), step, max_entries=max_entries, rng=rng)


def check_suite(seed: int, max_entries: int | None = 4, step: float = STEP) -> dict[str, float]:
    """Max relative backprop/central-difference error per case for one seed."""
    rng = np.random.default_rng([seed, 0x6C])
    B, T, C = 2, 7, 3
    x = rng.normal(size=(B, T, C))
    out: dict[str, float] = {}

    # activations have no parameters; check them through a leading affine
    for name, act in (("tanh", Tanh()), ("leaky_relu", LeakyReLU(0.1))):
        out[name] = _layer_case(Sequential(Affine(C, 4, rng), act), x, rng, max_entries, step)
    out["affine"] = _layer_case(Affine(C, 4, rng), x, rng, max_entries, step)
    out["conv1d"] = _layer_case(Conv1d(C, 4, 3, rng, dilation=2), x, rng, max_entries, step)
    out["depthwise_conv1d"] = _layer_case(Sequential(DepthwiseConv1d(C, 3, rng), Affine(C, 2, rng)),
                                          x, rng, max_entries, step)
    ln = LayerNorm(C)
    ln.gain.data[...] = rng.normal(1.0, 0.1, size=C)
    out["layer_norm"] = _layer_case(Sequential(Affine(C, C, rng), ln), x, rng, max_entries, step)
    out["self_attention"] = _layer_case(SelfAttention(C, rng), x, rng, max_entries, step)
    out["conv_attention_block"] = _layer_case(Sequential(Affine(C, 4, rng), ConvAttentionBlock(4, rng)),
                                              x, rng, max_entries, step)

    mrf_cfg = MrfConfig(channels=3)
    mapper = MrfMapper(mrf_cfg, C, 2, rng)
    read = _projected((B, 8, 2), rng)
    xm = rng.normal(size=(B, 8, C))
    out["mrf_mapper"] = check_gradients(mapper.parameters(), lambda: read(mrf_forward(mrf_cfg, mapper, xm)),
                                        step, max_entries=max_entries, rng=rng)

    field = make_vector_field(C, 5, rng)
    batch = FlowBatch(rng.normal(size=(B, T, C)), rng.normal(size=(B, T, C)), rng.uniform(size=B),
                      rng.normal(size=(B, T, C)))
    out["cfm_loss"] = check_gradients(field.parameters(), lambda: cfm_loss(field, batch, FlowConfig()),
                                      step, max_entries=max_entries, rng=rng)

    enc, dec = make_autoencoder(5, 2, 4, rng)
    xa = rng.normal(size=(B, T, 5))
    params = {**{f"enc.{k}": v for k, v in enc.parameters().items()},
              **{f"dec.{k}": v for k, v in dec.parameters().items()}}
    out["ae_loss"] = check_gradients(params, lambda: ae_loss(dec(enc(Tensor(xa))), xa),
                                     step, max_entries=max_entries, rng=rng)

    # a longer sequence keeps the deepest attention weights well above the
    # finite-difference roundoff floor
    Tp = 12
    prior = PriorNet(2, 4, rng)
    f_c = rng.normal(size=(Tp, 2))
    inp = PriorInput(rng.normal(size=2), rng.normal(size=(Tp, 2)))
    out["prior_nll"] = check_gradients(prior.parameters(), lambda: prior_nll(f_c, prior_forward(prior, inp)),
                                       max(step, PRIOR_STEP), max_entries=max_entries, rng=rng)
    return out

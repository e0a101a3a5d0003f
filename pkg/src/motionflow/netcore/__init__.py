"""Minimal differentiable-computation substrate (float64, reverse mode)."""
from .checkpoint import CheckpointError, load_arrays, load_model, save_arrays, save_model
from .engine import Adam, backward, check_gradients, forward, grad_check
from .layers import (Affine, Conv1d, DepthwiseConv1d, LayerNorm, LeakyReLU, Module, SelfAttention,
                     Sequential, ShapeError, Tanh, conv_out_length, mlp)
from .tensor import NonFiniteError, Tensor, affine, as_tensor, concat, conv1d, depthwise_conv1d, layer_norm, time_map

__all__ = [
    "Adam", "Affine", "CheckpointError", "Conv1d", "DepthwiseConv1d", "LayerNorm", "LeakyReLU",
    "Module", "NonFiniteError", "SelfAttention", "Sequential", "ShapeError", "Tanh", "Tensor",
    "affine", "as_tensor", "backward", "check_gradients", "concat", "conv1d", "conv_out_length",
    "depthwise_conv1d", "forward", "grad_check", "layer_norm", "load_arrays", "load_model", "mlp",
    "save_arrays", "save_model", "time_map",
]

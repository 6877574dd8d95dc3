from .checkpoint import load_checkpoint, save_checkpoint
from .layers import Conv1d, LayerNorm, Linear, MultiHeadAttention, ParamStore, sinusoidal_encoding
from .optim import adam_step, clip_grad_norm
from .tensor import (NonFiniteError, Tensor, cross_entropy, dropout, gather_rows, layer_norm, mae,
                     mse, no_grad, relu, softmax, tanh)

__all__ = [
    "Conv1d", "LayerNorm", "Linear", "MultiHeadAttention", "NonFiniteError", "ParamStore", "Tensor",
    "adam_step", "clip_grad_norm", "cross_entropy", "dropout", "gather_rows", "layer_norm",
    "load_checkpoint", "mae", "mse", "no_grad", "relu", "save_checkpoint", "sinusoidal_encoding",
    "softmax", "tanh",
]

"""Minimal tensor engine: reverse-mode autodiff, layers and Adam"""

from .module import Conv1d, Embedding, Linear, LSTMCell, Module
from .optim import Adam, AdamState, adam_step
from .tensor import Graph, Tensor, backward, default_dtype, gradients, no_grad, use_precision

__all__ = [
    "Adam",
    "AdamState",
    "Conv1d",
    "Embedding",
    "Graph",
    "Linear",
    "LSTMCell",
    "Module",
    "Tensor",
    "adam_step",
    "backward",
    "default_dtype",
    "gradients",
    "no_grad",
    "use_precision",
]

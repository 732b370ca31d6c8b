"""
Parameter containers and the layers the segmentation and transcript models use.
"""

from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from ..errors import CheckpointError
from . import functional as F
from .tensor import Tensor, default_dtype


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> Tensor:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in)) parameter"""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


class Module:
    """
    Base class: parameters are discovered from attributes in definition order,
    recursing into sub-modules and lists of sub-modules.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.named_parameters())

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise CheckpointError("Parameter names do not match the model",
                                  missing=missing[:5], unexpected=unexpected[:5])
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise CheckpointError("Parameter shape does not match the model",
                                      parameter=name, expected=p.shape, found=value.shape)
            p.data = value.astype(p.data.dtype, copy=True)

    def fill_(self, value: float) -> None:
        """Overwrite every parameter with a constant"""
        for p in self.parameters().values():
            p.data[...] = value

    def count_parameters(self) -> int:
        return sum(p.size for p in self.parameters().values())


class Linear(Module):
    """Per-row affine map; on a T×C_in sequence it is the 1×1 temporal convolution"""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        self.weight = uniform_init(rng, (in_features, out_features), in_features)
        self.bias = uniform_init(rng, (out_features,), in_features)

    def __call__(self, x: Tensor) -> Tensor:
        return F.add(F.matmul(x, self.weight), self.bias)


class Conv1d(Module):
    """Dilated temporal convolution with same-length output"""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 kernel_size: int = 3, dilation: int = 1):
        fan_in = in_channels * kernel_size
        self.dilation = dilation
        self.weight = uniform_init(rng, (kernel_size, in_channels, out_channels), fan_in)
        self.bias = uniform_init(rng, (out_channels,), fan_in)

    def __call__(self, x: Tensor) -> Tensor:
        return F.conv1d(x, self.weight, self.bias, dilation=self.dilation)


class Embedding(Module):
    def __init__(self, num_embeddings: int, dim: int, rng: np.random.Generator):
        self.weight = Tensor(rng.normal(0.0, 1.0, size=(num_embeddings, dim)), requires_grad=True)

    def __call__(self, ids: List[int]) -> Tensor:
        return F.take_rows(self.weight, ids)


class LSTMCell(Module):
    """Single LSTM step on 1×in rows; gate order input, forget, cell, output"""

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.hidden_size = hidden_size
        self.w_input = uniform_init(rng, (input_size, 4 * hidden_size), hidden_size)
        self.w_hidden = uniform_init(rng, (hidden_size, 4 * hidden_size), hidden_size)
        self.bias = uniform_init(rng, (4 * hidden_size,), hidden_size)

    def initial_state(self) -> Tuple[Tensor, Tensor]:
        zeros = np.zeros((1, self.hidden_size), dtype=default_dtype())
        return Tensor.wrap(zeros), Tensor.wrap(zeros.copy())

    def __call__(self, x: Tensor, state: Optional[Tuple[Tensor, Tensor]] = None) -> Tuple[Tensor, Tensor]:
        h, c = state if state is not None else self.initial_state()
        gates = F.add(F.add(F.matmul(x, self.w_input), F.matmul(h, self.w_hidden)), self.bias)
        n = self.hidden_size
        i = F.sigmoid(F.slice_axis(gates, 0, n, axis=1))
        f = F.sigmoid(F.slice_axis(gates, n, 2 * n, axis=1))
        g = F.tanh(F.slice_axis(gates, 2 * n, 3 * n, axis=1))
        o = F.sigmoid(F.slice_axis(gates, 3 * n, 4 * n, axis=1))
        c_next = F.add(F.mul(f, c), F.mul(i, g))
        h_next = F.mul(o, F.tanh(c_next))
        return h_next, c_next
